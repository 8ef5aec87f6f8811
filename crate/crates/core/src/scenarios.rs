//! Deterministic scenario families.
//!
//! * [`d2`]: disjoint indicator blocks, two popular and two niche items.
//! * [`s1`]: four popular groups of 100 users, a picky item with four
//!   users and a niche item with one user.
//! * [`random_block`]: random majority-minority matrices with a singular
//!   value gap, rows and columns shuffled.
//! * [`popularity_gap_instance`]: instances of the popularity-gap class
//!   together with a general collective column and an exploration limit.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{
    invert_permutation, sigma, singular_values_of, GroupPartition, Interval, RatingsMatrix,
};
use crate::popgap::{self, PopularitySplit};

/// A matrix with its majority-minority partition.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockScenario {
    pub matrix: RatingsMatrix,
    pub partition: GroupPartition,
}

/// Indicator blocks: items 0 and 1 are each liked by `m_maj` users, items
/// 2 and 3 by `m_minor` users. Every rating is 1.
pub fn d2(m_maj: usize, m_minor: usize) -> BlockScenario {
    let groups = [m_maj, m_maj, m_minor, m_minor];
    let m: usize = groups.iter().sum();
    let mut data = vec![0.0; m * 4];
    let mut u = 0;
    for (item, &size) in groups.iter().enumerate() {
        for _ in 0..size {
            data[u * 4 + item] = 1.0;
            u += 1;
        }
    }
    BlockScenario {
        matrix: RatingsMatrix::new(m, 4, data).expect("indicator matrix is valid"),
        partition: GroupPartition::leading(m, 4, 2 * m_maj, 2).expect("valid leading block"),
    }
}

/// The four-group scenario with a picky item and a collective.
#[derive(Debug, Clone)]
pub struct S1 {
    pub matrix: RatingsMatrix,
    pub partition: GroupPartition,
    pub alpha: f64,
    /// Picky item targeted by the collective.
    pub target_item: usize,
    pub picky_users: Vec<usize>,
    /// 25 users from each popular group.
    pub collective: Vec<usize>,
}

/// Users `100g..100g+100` rate item `g` (g < 4) with 1; users 400..403
/// rate the picky item 4 with 1; user 404 rates the niche item 5 with 1.
pub fn s1() -> S1 {
    let (m, n) = (405, 6);
    let mut data = vec![0.0; m * n];
    for u in 0..400 {
        data[u * n + u / 100] = 1.0;
    }
    for u in 400..404 {
        data[u * n + 4] = 1.0;
    }
    data[404 * n + 5] = 1.0;
    S1 {
        matrix: RatingsMatrix::new(m, n, data).expect("indicator matrix is valid"),
        partition: GroupPartition::leading(m, n, 400, 4).expect("valid leading block"),
        alpha: 2.1,
        target_item: 4,
        picky_users: (400..404).collect(),
        collective: (0..4).flat_map(|g| 100 * g..100 * g + 25).collect(),
    }
}

/// Random majority-minority matrix with a nonempty singular value gap.
///
/// The majority block is a nonnegative product `W H` of random rank, the
/// minority block is scaled so that its top singular value sits strictly
/// inside `(0, σ_{k_maj}(R_maj))`. Rows and columns are shuffled and the
/// partition is permuted accordingly.
pub fn random_block<R: Rng>(rng: &mut R) -> BlockScenario {
    loop {
        let m_maj = rng.gen_range(3..=12);
        let n_maj = rng.gen_range(2..=6);
        let m_min = rng.gen_range(1..=6);
        let n_min = rng.gen_range(1..=4);
        let rank = rng.gen_range(1..=n_maj.min(m_maj));
        let w = DMatrix::from_fn(m_maj, rank, |_, _| rng.gen_range(0.1..1.0));
        let h = DMatrix::from_fn(rank, n_maj, |_, _| rng.gen_range(0.0..1.0));
        let maj = w * h;
        let min = DMatrix::from_fn(m_min, n_min, |_, _| rng.gen_range(0.05..1.0));
        let s_maj = singular_values_of(&maj).expect("small svd");
        let s_min = singular_values_of(&min).expect("small svd");
        let k = crate::matrix::numeric_rank(&s_maj);
        let target = sigma(&s_maj, k) * rng.gen_range(0.2..0.8);
        if k == 0 || target <= 0.0 {
            continue;
        }
        let scale = target / s_min[0];
        let (m, n) = (m_maj + m_min, n_maj + n_min);
        let mut full = DMatrix::zeros(m, n);
        full.view_mut((0, 0), (m_maj, n_maj)).copy_from(&maj);
        full.view_mut((m_maj, n_maj), (m_min, n_min))
            .copy_from(&(min * scale));
        let ordered = RatingsMatrix::from_dmatrix(full).expect("nonnegative");
        let mut rows: Vec<usize> = (0..m).collect();
        let mut cols: Vec<usize> = (0..n).collect();
        rows.shuffle(rng);
        cols.shuffle(rng);
        let matrix = ordered.permuted(&rows, &cols).expect("permutation");
        let rinv = invert_permutation(&rows);
        let cinv = invert_permutation(&cols);
        let partition = GroupPartition::from_majority(
            m,
            n,
            (0..m_maj).map(|u| rinv[u]),
            (0..n_maj).map(|i| cinv[i]),
        )
        .expect("valid partition");
        if partition.validate_for(&matrix).is_ok() {
            return BlockScenario { matrix, partition };
        }
    }
}

/// Popularity-gap instance with a general collective strategy.
#[derive(Debug, Clone, Serialize)]
pub struct PopGapInstance {
    #[serde(skip)]
    pub matrix: RatingsMatrix,
    pub n_bar: usize,
    /// Replacement for column `n_bar` (the first unpopular item).
    pub r_tilde: Vec<f64>,
    pub alpha: f64,
    pub switch_users: Vec<usize>,
    pub collective: Vec<usize>,
}

/// Constructive generator for popularity-gap instances.
///
/// Majority users are grouped by popular item with top ratings near 1 and
/// faint off-ratings. A few switch users prefer item `n_bar` (their top)
/// over one popular item rated about 0.5. One remaining minority user
/// prefers item `n_bar + 1` and likes every item in `[n_bar + 1]` a little
/// less. The collective column rates item `n_bar` at a common value for a
/// stratified sample of majority users, sized so the new column carries
/// about as much energy as the weakest popular direction. `alpha` is drawn
/// from the part of the gap interval below the estimated new singular
/// value.
pub fn popularity_gap_instance<R: Rng>(rng: &mut R) -> Result<PopGapInstance> {
    for _ in 0..64 {
        let inst = try_popgap(rng)?;
        let split = PopularitySplit::new(&inst.matrix, inst.n_bar)?;
        let report = popgap::class_membership(&split)?;
        if report.in_class && report.exclusive_classes && report.minority_nonempty {
            return Ok(inst);
        }
    }
    Err(Error::Infeasible(
        "popularity-gap generator failed to produce an in-class instance".into(),
    ))
}

fn try_popgap<R: Rng>(rng: &mut R) -> Result<PopGapInstance> {
    let n_bar = rng.gen_range(3..=5);
    let n = n_bar + 2;
    let group_sizes: Vec<usize> = (0..n_bar).map(|_| rng.gen_range(1000..=1400)).collect();
    let n_switch = rng.gen_range(2..=4);
    let m_maj: usize = group_sizes.iter().sum();
    let m = m_maj + n_switch + 1;
    let mut data = vec![0.0; m * n];
    let mut u = 0;
    for (g, &size) in group_sizes.iter().enumerate() {
        for _ in 0..size {
            for i in 0..n_bar {
                data[u * n + i] = if i == g {
                    rng.gen_range(0.95..=1.0)
                } else {
                    rng.gen_range(0.0..0.05)
                };
            }
            u += 1;
        }
    }
    let switch_users: Vec<usize> = (m_maj..m_maj + n_switch).collect();
    for &s in &switch_users {
        data[s * n + n_bar] = rng.gen_range(0.97..=1.0);
        data[s * n + rng.gen_range(0..n_bar)] = rng.gen_range(0.47..0.55);
    }
    let other = m - 1;
    for i in 0..=n_bar {
        data[other * n + i] = rng.gen_range(0.44..0.47);
    }
    data[other * n + n_bar + 1] = rng.gen_range(0.5..0.55);
    let matrix = RatingsMatrix::new(m, n, data)?;

    // Collective column: a common value v for a stratified majority sample.
    let split = PopularitySplit::new(&matrix, n_bar)?;
    let sn = sigma(&singular_values_of(popgap::popular_prefs(&split).as_dmatrix())?, n_bar);
    let v: f64 = rng.gen_range(0.7..0.8);
    let per_group = ((sn * sn / (v * v)) / n_bar as f64).floor() as usize;
    let mut r_tilde = matrix.column(n_bar);
    let mut collective = Vec::new();
    let mut start = 0;
    for &size in &group_sizes {
        let members = start..start + per_group.min(size);
        r_tilde[members.clone()].fill(v);
        collective.extend(members);
        start += size;
    }

    let gap = popgap::gap_interval(&split)?;
    let s_hat = popgap::sigma_hat(&split, &r_tilde).unwrap_or(0.0);
    let hi = gap.map_or(0.0, |g| g.hi.min(s_hat));
    let lo = gap.map_or(0.0, |g| g.lo);
    let alpha = match Interval::open(lo, hi) {
        Some(iv) => rng.gen_range(iv.lo + 0.1 * (iv.hi - iv.lo)..iv.hi - 0.1 * (iv.hi - iv.lo)),
        None => lo,
    };
    Ok(PopGapInstance {
        matrix,
        n_bar,
        r_tilde,
        alpha,
        switch_users,
        collective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn d2_shape() {
        let sc = d2(4, 1);
        assert_eq!(sc.matrix.shape(), (10, 4));
        assert_eq!(sc.partition.m_bar(), 8);
        assert_eq!(sc.partition.n_bar(), 2);
        sc.partition.validate_for(&sc.matrix).unwrap();
    }

    #[test]
    fn s1_structure() {
        let sc = s1();
        assert_eq!(sc.matrix.shape(), (405, 6));
        sc.partition.validate_for(&sc.matrix).unwrap();
        assert_eq!(sc.collective.len(), 100);
    }

    #[test]
    fn random_block_is_valid_and_deterministic() {
        let a = random_block(&mut ChaCha8Rng::seed_from_u64(3));
        let b = random_block(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        a.partition.validate_for(&a.matrix).unwrap();
        assert!(crate::matrix::singular_value_gap(&a.matrix, &a.partition)
            .unwrap()
            .is_some());
    }
}
