//! Desk-scale online matrix completion: random exploration, the zero-block
//! hypothesis on observed minority entries, the zero-padded majority
//! completion and the reduction that never raises rank.
//!
//! No rank-minimization solver is provided. Completions are constructed and
//! reduced, and the reduction relation is what gets certified.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{numeric_rank, singular_values_of, GroupPartition, RatingsMatrix};

/// Revealed `(user, item)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ObservedSet {
    m: usize,
    n: usize,
    pairs: BTreeSet<(usize, usize)>,
}

impl ObservedSet {
    pub fn new(m: usize, n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (u, i) in pairs {
            if u >= m || i >= n {
                return Err(Error::InvalidArgument(format!(
                    "pair ({u}, {i}) outside {m}x{n}"
                )));
            }
            if !set.insert((u, i)) {
                return Err(Error::InvalidArgument(format!("pair ({u}, {i}) listed twice")));
            }
        }
        Ok(Self { m, n, pairs: set })
    }

    pub fn empty(m: usize, n: usize) -> Self {
        Self { m, n, pairs: BTreeSet::new() }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, u: usize, i: usize) -> bool {
        self.pairs.contains(&(u, i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }
}

/// Queries `per_round` fresh pairs in each of `rounds` rounds, uniformly
/// without replacement over all `m·n` pairs.
pub fn explore(r_star: &RatingsMatrix, rounds: usize, per_round: usize, seed: u64) -> Result<ObservedSet> {
    let (m, n) = r_star.shape();
    let total = rounds
        .checked_mul(per_round)
        .filter(|&t| t <= m * n)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{rounds} rounds of {per_round} queries exceed the {} available pairs",
                m * n
            ))
        })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, m * n, total);
    ObservedSet::new(m, n, picks.into_iter().map(|k| (k / n, k % n)))
}

/// Each user reveals `q` of her items, uniformly without replacement.
pub fn explore_per_user(m: usize, n: usize, q: usize, rng: &mut ChaCha8Rng) -> Result<ObservedSet> {
    if q > n {
        return Err(Error::InvalidArgument(format!("q = {q} exceeds {n} items")));
    }
    let mut pairs = Vec::with_capacity(m * q);
    for u in 0..m {
        pairs.extend(sample(rng, n, q).into_iter().map(|i| (u, i)));
    }
    ObservedSet::new(m, n, pairs)
}

/// True iff every observed minority-block entry of `R*` is zero.
pub fn omega_satisfies_prop22(omega: &ObservedSet, r_star: &RatingsMatrix, p: &GroupPartition) -> bool {
    omega.iter().all(|(u, i)| {
        p.is_majority_user(u) || p.is_majority_item(i) || r_star.get(u, i) == 0.0
    })
}

/// Ratings known on a subset of pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialMatrix {
    values: DMatrix<f64>,
    known: DMatrix<bool>,
}

impl PartialMatrix {
    /// `R*` restricted to `omega`.
    pub fn from_observed(r_star: &RatingsMatrix, omega: &ObservedSet) -> Result<Self> {
        if omega.shape() != r_star.shape() {
            return Err(Error::DimensionMismatch("observed set and matrix differ in shape".into()));
        }
        let (m, n) = r_star.shape();
        let mut values = DMatrix::zeros(m, n);
        let mut known = DMatrix::from_element(m, n, false);
        for (u, i) in omega.iter() {
            values[(u, i)] = r_star.get(u, i);
            known[(u, i)] = true;
        }
        Ok(Self { values, known })
    }

    /// From rows where `None` marks an unknown entry.
    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if m == 0 || n == 0 {
            return Err(Error::EmptyMatrix { rows: m, cols: n });
        }
        let mut values = DMatrix::zeros(m, n);
        let mut known = DMatrix::from_element(m, n, false);
        for (u, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch("ragged partial matrix".into()));
            }
            for (i, v) in row.iter().enumerate() {
                if let Some(v) = *v {
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(Error::InvalidRating { row: u, col: i, value: v });
                    }
                    values[(u, i)] = v;
                    known[(u, i)] = true;
                }
            }
        }
        Ok(Self { values, known })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn get(&self, u: usize, i: usize) -> Option<f64> {
        self.known[(u, i)].then(|| self.values[(u, i)])
    }

    pub fn observed(&self) -> ObservedSet {
        let (m, n) = self.shape();
        ObservedSet::new(
            m,
            n,
            (0..m).flat_map(|u| (0..n).map(move |i| (u, i))).filter(|&(u, i)| self.known[(u, i)]),
        )
        .expect("pairs are in range and distinct")
    }

    /// True iff `x` agrees exactly with every known entry.
    pub fn is_feasible(&self, x: &RatingsMatrix) -> bool {
        let (m, n) = self.shape();
        x.shape() == (m, n)
            && (0..m).all(|u| (0..n).all(|i| !self.known[(u, i)] || x.get(u, i) == self.values[(u, i)]))
    }

    /// True iff every known minority-block entry is zero.
    pub fn satisfies_prop22(&self, p: &GroupPartition) -> bool {
        self.observed().iter().all(|(u, i)| {
            p.is_majority_user(u) || p.is_majority_item(i) || self.values[(u, i)] == 0.0
        })
    }
}

/// Zero-padded majority completion with its ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub matrix: RatingsMatrix,
    pub rank: usize,
    pub majority_rank: usize,
}

/// Completes the majority block and pads everything else with zeros.
///
/// The majority block is taken from `candidate` when given (it must be
/// feasible), otherwise unknown majority entries are set to zero. The
/// result is feasible and its rank is that of the completed majority block.
pub fn sparsest_majority_completion(
    partial: &PartialMatrix,
    p: &GroupPartition,
    candidate: Option<&RatingsMatrix>,
) -> Result<Completion> {
    let (m, n) = partial.shape();
    if (p.m(), p.n()) != (m, n) {
        return Err(Error::DimensionMismatch("partition and partial matrix differ in shape".into()));
    }
    if !partial.satisfies_prop22(p) {
        return Err(Error::Infeasible(
            "an observed minority-block rating is nonzero".into(),
        ));
    }
    for (u, i) in partial.observed().iter() {
        let off_block = p.is_majority_user(u) != p.is_majority_item(i);
        if off_block && partial.values[(u, i)] != 0.0 {
            return Err(Error::Infeasible(format!(
                "observed off-block rating at ({u}, {i}) is nonzero"
            )));
        }
    }
    let source = match candidate {
        Some(c) => {
            if !partial.is_feasible(c) {
                return Err(Error::Infeasible("candidate completion disagrees with observations".into()));
            }
            c.as_dmatrix().clone()
        }
        None => partial.values.clone(),
    };
    let mut out = DMatrix::zeros(m, n);
    for &u in p.majority_users() {
        for &i in p.majority_items() {
            out[(u, i)] = source[(u, i)];
        }
    }
    let matrix = RatingsMatrix::from_dmatrix(out)?;
    assert!(partial.is_feasible(&matrix), "zero padding must stay feasible");
    let majority_rank = numeric_rank(&singular_values_of(
        &matrix.submatrix(p.majority_users(), p.majority_items()),
    )?);
    let rank = numeric_rank(&singular_values_of(matrix.as_dmatrix())?);
    Ok(Completion {
        matrix,
        rank,
        majority_rank,
    })
}

/// Keeps the majority block of `x` and zeroes the rest.
pub fn reduce_solution(x: &RatingsMatrix, p: &GroupPartition) -> Result<RatingsMatrix> {
    if x.shape() != (p.m(), p.n()) {
        return Err(Error::DimensionMismatch("partition and matrix differ in shape".into()));
    }
    let mut data = DMatrix::zeros(p.m(), p.n());
    for &u in p.majority_users() {
        for &i in p.majority_items() {
            data[(u, i)] = x.get(u, i);
        }
    }
    RatingsMatrix::from_dmatrix(data)
}

/// Numeric rank of a ratings matrix.
pub fn rank(x: &RatingsMatrix) -> Result<usize> {
    Ok(numeric_rank(&singular_values_of(x.as_dmatrix())?))
}

/// Monte Carlo frequency with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Frequency {
    pub hits: usize,
    pub trials: usize,
}

impl Frequency {
    pub fn rate(&self) -> f64 {
        self.hits as f64 / self.trials as f64
    }

    /// Standard error of the rate under a true probability `p`.
    pub fn std_error(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

/// Fraction of trials in which per-user sampling of `q` items yields an
/// observed set meeting the zero minority-block hypothesis. Trial `t` uses
/// stream `t` of a ChaCha8 generator seeded with `seed`, so the result does
/// not depend on how trials are scheduled across threads.
pub fn prop22_hold_rate(
    r_star: &RatingsMatrix,
    p: &GroupPartition,
    q: usize,
    trials: usize,
    seed: u64,
) -> Result<Frequency> {
    let (m, n) = r_star.shape();
    if q > n {
        return Err(Error::InvalidArgument(format!("q = {q} exceeds {n} items")));
    }
    let hits = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let omega = explore_per_user(m, n, q, &mut rng).expect("q checked above");
            usize::from(omega_satisfies_prop22(&omega, r_star, p))
        })
        .sum();
    Ok(Frequency { hits, trials })
}
