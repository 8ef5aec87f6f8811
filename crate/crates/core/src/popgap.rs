//! Popularity-gap model: the first `n̄` columns are popular, users are
//! classified by where their top items fall, and class membership hinges on
//! a ratings gap `Δ` that shrinks as the popular block's `n̄`-th singular
//! value grows.
//!
//! Items are 0-based here, so "item `n̄ + 1`" of the one-based notation is
//! column `n_bar`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::learner::{social_welfare, top_items, LearnerModel, TieBreak};
use crate::matrix::{sigma, singular_values_of, Interval, RatingsMatrix, Svd};

/// `2^{5/2}`.
const TWO_5_2: f64 = 5.656_854_249_492_381;

/// A ratings matrix in `[0, 1]` whose first `n_bar` columns are popular.
#[derive(Debug, Clone, Copy)]
pub struct PopularitySplit<'a> {
    matrix: &'a RatingsMatrix,
    n_bar: usize,
}

impl<'a> PopularitySplit<'a> {
    pub fn new(matrix: &'a RatingsMatrix, n_bar: usize) -> Result<Self> {
        let n = matrix.cols();
        if n_bar == 0 || n_bar >= n {
            return Err(Error::InvalidArgument(format!(
                "popular prefix {n_bar} must satisfy 0 < n_bar < {n}"
            )));
        }
        for u in 0..matrix.rows() {
            for i in 0..n {
                let v = matrix.get(u, i);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::OutOfUnitRange { row: u, col: i, value: v });
                }
            }
        }
        Ok(Self { matrix, n_bar })
    }

    pub fn matrix(&self) -> &'a RatingsMatrix {
        self.matrix
    }

    pub fn n_bar(&self) -> usize {
        self.n_bar
    }

    pub fn m(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n(&self) -> usize {
        self.matrix.cols()
    }

    /// L1 norms of the unpopular columns.
    fn unpopular_l1(&self) -> Vec<f64> {
        (self.n_bar..self.n()).map(|i| self.matrix.column_abs_sum(i)).collect()
    }

    /// `κ_(R, n̄)`: largest unpopular column L1 norm.
    pub fn kappa(&self) -> f64 {
        self.unpopular_l1().into_iter().fold(0.0, f64::max)
    }

    /// `κ̲`: smallest unpopular column L1 norm.
    pub fn kappa_lower(&self) -> f64 {
        self.unpopular_l1().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// `σ_n̄(R′(n̄))`.
    pub fn sigma_nbar_popular(&self) -> Result<f64> {
        Ok(sigma(
            &singular_values_of(&self.popular_block())?,
            self.n_bar,
        ))
    }

    /// `A(n̄)`: the first `n̄` columns.
    pub fn popular_block(&self) -> DMatrix<f64> {
        self.matrix.as_dmatrix().columns(0, self.n_bar).into_owned()
    }
}

/// `R′(n̄)`: unpopular columns zeroed.
pub fn popular_prefs(split: &PopularitySplit<'_>) -> RatingsMatrix {
    let mut data = split.matrix.as_dmatrix().clone();
    for i in split.n_bar..split.n() {
        data.column_mut(i).fill(0.0);
    }
    RatingsMatrix::from_dmatrix(data).expect("zeroing keeps ratings valid")
}

/// `Δ = 2^{5/2} κ n^{3/2} / σ²`, undefined for `σ = 0`.
pub fn ratings_gap(kappa: f64, n: usize, sigma_nbar: f64) -> Option<f64> {
    (sigma_nbar > 0.0)
        .then(|| TWO_5_2 * kappa * (n as f64).powf(1.5) / (sigma_nbar * sigma_nbar))
}

/// Group membership by top items; both flags may be set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UserClass {
    pub majority: bool,
    pub minority: bool,
}

/// Majority iff some top item is popular; minority iff some top item is
/// unpopular.
pub fn classify_users(split: &PopularitySplit<'_>) -> Vec<UserClass> {
    (0..split.m())
        .map(|u| {
            let top = top_items(&split.matrix.row(u));
            UserClass {
                majority: top.iter().any(|&i| i < split.n_bar),
                minority: top.iter().any(|&i| i >= split.n_bar),
            }
        })
        .collect()
}

fn max_non_top(row: &[f64]) -> Option<f64> {
    let top = top_items(row);
    (0..row.len())
        .filter(|i| !top.contains(i))
        .map(|i| row[i])
        .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Outcome of an assumption check for one user, with its slack
/// (positive iff the strict inequality holds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UserCheck {
    pub user: usize,
    pub holds: bool,
    pub slack: f64,
}

/// Membership of `(R, n̄)` in the popularity-gap class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMembershipReport {
    pub kappa: f64,
    pub kappa_lower: f64,
    pub sigma_nbar_popular: f64,
    /// `Δ(R, n̄)`; `None` when `σ_n̄(R′(n̄)) = 0`.
    pub delta_gap: Option<f64>,
    /// Majority users' top ratings clear every other rating by `Δ`.
    pub assumption_f3: Vec<UserCheck>,
    /// Minority users rate some popular item above `Δ`.
    pub assumption_f4: Vec<UserCheck>,
    pub in_class: bool,
    pub reason: Option<String>,
    pub user_classes: Vec<UserClass>,
    /// No user is in both groups.
    pub exclusive_classes: bool,
    pub minority_nonempty: bool,
    /// `2^{5/4} n^{3/4} √κ < σ_n̄(R′(n̄))`, implied by membership.
    pub necessary_inequality: bool,
}

pub fn class_membership(split: &PopularitySplit<'_>) -> Result<ClassMembershipReport> {
    let r = split.matrix;
    let kappa = split.kappa();
    let sn = split.sigma_nbar_popular()?;
    let delta = ratings_gap(kappa, split.n(), sn);
    let classes = classify_users(split);
    let mut f3 = Vec::new();
    let mut f4 = Vec::new();
    let mut reason = None;
    if let Some(delta) = delta {
        for (u, c) in classes.iter().enumerate() {
            let row = r.row(u);
            if c.majority {
                let check = match max_non_top(&row) {
                    Some(other) => {
                        let slack = row_max(&row) - delta - other;
                        UserCheck { user: u, holds: other < row_max(&row) - delta, slack }
                    }
                    None => UserCheck { user: u, holds: false, slack: f64::NEG_INFINITY },
                };
                f3.push(check);
            }
            if c.minority {
                let best_pop = row[..split.n_bar].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                f4.push(UserCheck { user: u, holds: best_pop > delta, slack: best_pop - delta });
            }
        }
    } else {
        reason = Some("σ_n̄(R′(n̄)) = 0, so the ratings gap is undefined".into());
    }
    let in_class = delta.is_some() && f3.iter().all(|c| c.holds) && f4.iter().all(|c| c.holds);
    if delta.is_some() && !in_class {
        reason = Some(format!(
            "{} majority and {} minority users violate the ratings gap",
            f3.iter().filter(|c| !c.holds).count(),
            f4.iter().filter(|c| !c.holds).count()
        ));
    }
    let n = split.n() as f64;
    Ok(ClassMembershipReport {
        kappa,
        kappa_lower: split.kappa_lower(),
        sigma_nbar_popular: sn,
        delta_gap: delta,
        assumption_f3: f3,
        assumption_f4: f4,
        in_class,
        reason,
        exclusive_classes: classes.iter().all(|c| !(c.majority && c.minority)),
        minority_nonempty: classes.iter().any(|c| c.minority),
        user_classes: classes,
        necessary_inequality: 2f64.powf(1.25) * n.powf(0.75) * kappa.sqrt() < sn,
    })
}

/// Singular value bounds implied by class membership.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingularBounds {
    pub sigma_nbar: f64,
    pub sigma_nbar_next: f64,
    /// `2^{5/4} n^{3/4} √κ`.
    pub lower_bound: f64,
    /// `√((n − n̄) κ)`.
    pub upper_bound: f64,
    /// `σ_n̄(R) ≥ lower_bound`.
    pub lower_ok: bool,
    /// `σ_{n̄+1}(R) ≤ upper_bound`.
    pub upper_ok: bool,
}

pub fn singular_bounds_check(split: &PopularitySplit<'_>) -> Result<SingularBounds> {
    let s = singular_values_of(split.matrix.as_dmatrix())?;
    let kappa = split.kappa();
    let n = split.n() as f64;
    let lower_bound = 2f64.powf(1.25) * n.powf(0.75) * kappa.sqrt();
    let upper_bound = ((n - split.n_bar as f64) * kappa).sqrt();
    let sigma_nbar = sigma(&s, split.n_bar);
    let sigma_nbar_next = sigma(&s, split.n_bar + 1);
    Ok(SingularBounds {
        sigma_nbar,
        sigma_nbar_next,
        lower_bound,
        upper_bound,
        lower_ok: sigma_nbar >= lower_bound,
        upper_ok: sigma_nbar_next <= upper_bound,
    })
}

/// `G(n̄, R) = (√((n − n̄) κ), 2^{5/4} n^{3/4} √κ)`. Errors when `κ = 0`,
/// where both endpoints collapse to zero.
pub fn gap_interval(split: &PopularitySplit<'_>) -> Result<Option<Interval>> {
    let kappa = split.kappa();
    if kappa <= 0.0 {
        return Err(Error::Undefined(
            "no unpopular ratings (κ = 0): the gap interval degenerates".into(),
        ));
    }
    Ok(gap_interval_for(kappa, split.n(), split.n_bar))
}

/// Gap interval from its scalar ingredients.
pub fn gap_interval_for(kappa: f64, n: usize, n_bar: usize) -> Option<Interval> {
    let nf = n as f64;
    Interval::open(
        ((nf - n_bar as f64) * kappa).sqrt(),
        2f64.powf(1.25) * nf.powf(0.75) * kappa.sqrt(),
    )
}

/// `‖Π* − I_{n,n̄}‖_F` where `Π*` projects onto the top-`n̄` right singular
/// directions of `R`.
pub fn projection_gap(split: &PopularitySplit<'_>) -> Result<f64> {
    let svd = Svd::compute(split.matrix.as_dmatrix())?;
    let s = &svd.singular_values;
    if crate::matrix::numeric_rank(s) < split.n_bar {
        return Err(Error::Undefined(format!(
            "rank below the popular prefix {}",
            split.n_bar
        )));
    }
    let v = svd.v_t.rows(0, split.n_bar).transpose();
    let mut diff = &v * v.transpose();
    for i in 0..split.n_bar {
        diff[(i, i)] -= 1.0;
    }
    Ok(diff.norm())
}

/// Upper bound on the projection gap: `Δ / (2√n)`.
pub fn projection_bound(split: &PopularitySplit<'_>) -> Result<Option<f64>> {
    let delta = ratings_gap(split.kappa(), split.n(), split.sigma_nbar_popular()?);
    Ok(delta.map(|d| d / (2.0 * (split.n() as f64).sqrt())))
}

/// Minority users whose top items include column `n_bar`.
pub fn switch_users(split: &PopularitySplit<'_>) -> Vec<usize> {
    classify_users(split)
        .iter()
        .enumerate()
        .filter(|(u, c)| c.minority && top_items(&split.matrix.row(*u)).contains(&split.n_bar))
        .map(|(u, _)| u)
        .collect()
}

/// Feasible `δ` values `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaInterval {
    pub lo: f64,
    pub hi: f64,
}

impl DeltaInterval {
    /// True iff some positive `δ` satisfies both conditions.
    pub fn holds(&self) -> bool {
        self.lo < self.hi && self.hi > 0.0
    }

    pub fn contains(&self, delta: f64) -> bool {
        self.lo <= delta && delta < self.hi
    }
}

/// Range of `δ` for which non-switching minority users lose little and
/// switch users gain enough. `None` when nobody switches.
pub fn delta_interval(split: &PopularitySplit<'_>) -> Option<DeltaInterval> {
    let switch = switch_users(split);
    if switch.is_empty() {
        return None;
    }
    let r = split.matrix;
    let head = split.n_bar + 1;
    let classes = classify_users(split);
    let (mut sum_max, mut sum_min) = (0.0, 0.0);
    for (u, c) in classes.iter().enumerate() {
        if c.minority && !switch.contains(&u) {
            let row = &r.row(u)[..head];
            sum_max += row_max(row);
            sum_min += row.iter().copied().fold(f64::INFINITY, f64::min);
        }
    }
    let hi: f64 = switch
        .iter()
        .map(|&u| r.get(u, split.n_bar) - row_max(&r.row(u)[..split.n_bar]))
        .sum();
    Some(DeltaInterval {
        lo: (sum_max - sum_min).max(0.0),
        hi,
    })
}

/// `σ̂ = √(min(r̃ᵀr̃, σ_n̄(R*′(n̄))²) − ‖r̃ᵀA(n̄)‖₂)`: a lower bound on the
/// `(n̄+1)`-th singular value once column `n_bar` is replaced by `r_tilde`.
pub fn sigma_hat(split: &PopularitySplit<'_>, r_tilde: &[f64]) -> Result<f64> {
    if r_tilde.len() != split.m() {
        return Err(Error::DimensionMismatch(format!(
            "collective column has {} entries for {} users",
            r_tilde.len(),
            split.m()
        )));
    }
    let sn = split.sigma_nbar_popular()?;
    let rr: f64 = r_tilde.iter().map(|v| v * v).sum();
    let a = split.popular_block();
    let cross = (nalgebra::DVector::from_column_slice(r_tilde).transpose() * a).norm();
    let rad = rr.min(sn * sn) - cross;
    if rad < 0.0 {
        return Err(Error::Undefined(format!(
            "negative radicand {rad} in the singular value estimate"
        )));
    }
    Ok(rad.sqrt())
}

/// `R̃`: `R*` with column `n_bar` replaced by `r_tilde`.
pub fn apply_general(split: &PopularitySplit<'_>, r_tilde: &[f64]) -> Result<RatingsMatrix> {
    if r_tilde.len() != split.m() {
        return Err(Error::DimensionMismatch("collective column length".into()));
    }
    let mut data = split.matrix.as_dmatrix().clone();
    for (u, &v) in r_tilde.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfUnitRange { row: u, col: split.n_bar, value: v });
        }
        data[(u, split.n_bar)] = v;
    }
    RatingsMatrix::from_dmatrix(data)
}

/// Preconditions under which the general sufficient conditions apply.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralPreconditions {
    pub in_class: bool,
    pub exclusive_classes: bool,
    pub minority_nonempty: bool,
    /// Some positive `δ` exists.
    pub delta_feasible: bool,
    /// `α ∈ G(n̄, R*)`.
    pub alpha_in_gap: bool,
    /// `r̃` agrees with `R*` on every minority user.
    pub minority_unchanged: bool,
    /// `r̃ ≥ r*` entrywise (the realistic variant; informational).
    pub only_uprates: bool,
}

impl GeneralPreconditions {
    pub fn all(&self) -> bool {
        self.in_class
            && self.exclusive_classes
            && self.minority_nonempty
            && self.delta_feasible
            && self.alpha_in_gap
            && self.minority_unchanged
    }
}

/// The five sufficient conditions on a general collective column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralConditions {
    /// `α < σ̂`.
    pub learns_new_direction: bool,
    /// Collective ratings stay below each majority user's top by `Δ̃`.
    pub no_overhype: bool,
    /// Majority users keep a `Δ̃` top gap.
    pub majority_stays: bool,
    /// Switch users prefer the manipulated item by `Δ̃`.
    pub switch_users_join: bool,
    /// Remaining minority users still like some item in `[n̄ + 1]` above `Δ̃`.
    pub minority_stays: bool,
}

impl GeneralConditions {
    pub fn all(&self) -> bool {
        self.learns_new_direction
            && self.no_overhype
            && self.majority_stays
            && self.switch_users_join
            && self.minority_stays
    }
}

/// Evaluation of a general collective strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralSufficiencyReport {
    pub preconditions: GeneralPreconditions,
    pub sigma_hat: Option<f64>,
    /// `κ_(R*, n̄+1)`: largest L1 norm over columns after `n_bar`; zero
    /// when no such column exists.
    pub kappa_next: f64,
    /// `Δ(r̃; R*, n̄)`.
    pub collective_gap: Option<f64>,
    pub conditions: GeneralConditions,
    /// `α > √((n − n̄ − 1) κ_(R*, n̄+1))`, needed by the argument though not
    /// listed among the conditions.
    pub derived_alpha_condition: bool,
    pub verdict: bool,
    pub switch_users: Vec<usize>,
    pub truthful_rank: usize,
    pub collective_rank: usize,
    pub sw_before: f64,
    pub sw_after: f64,
    pub ratio: f64,
}

/// Evaluates the five conditions and simulates both runs.
pub fn check_general_sufficiency(
    split: &PopularitySplit<'_>,
    r_tilde: &[f64],
    alpha: f64,
    draw: TieBreak,
) -> Result<GeneralSufficiencyReport> {
    let r = split.matrix;
    let (n, nb) = (split.n(), split.n_bar);
    let membership = class_membership(split)?;
    let classes = &membership.user_classes;
    let switch = switch_users(split);
    let r_tilde_matrix = apply_general(split, r_tilde)?;

    let alpha_in_gap = gap_interval(split)
        .ok()
        .flatten()
        .is_some_and(|g| g.contains(alpha));
    let preconditions = GeneralPreconditions {
        in_class: membership.in_class,
        exclusive_classes: membership.exclusive_classes,
        minority_nonempty: membership.minority_nonempty,
        delta_feasible: delta_interval(split).is_some_and(|d| d.holds()),
        alpha_in_gap,
        minority_unchanged: classes
            .iter()
            .enumerate()
            .all(|(u, c)| !c.minority || r_tilde[u] == r.get(u, nb)),
        only_uprates: (0..split.m()).all(|u| r_tilde[u] >= r.get(u, nb)),
    };

    let kappa_next = (nb + 1..n).map(|i| r.column_abs_sum(i)).fold(0.0, f64::max);
    let s_hat = sigma_hat(split, r_tilde).ok();
    let collective_gap = s_hat
        .filter(|&s| s > 0.0)
        .map(|s| TWO_5_2 * (n as f64).powf(1.5) * kappa_next / (s * s));

    let conditions = match (s_hat, collective_gap) {
        (Some(s), Some(gap)) => {
            let majority: Vec<usize> = (0..split.m()).filter(|&u| classes[u].majority).collect();
            GeneralConditions {
                learns_new_direction: alpha < s,
                no_overhype: majority
                    .iter()
                    .all(|&u| r_tilde[u] < row_max(&r.row(u)) - gap),
                majority_stays: majority.iter().all(|&u| {
                    let row = r.row(u);
                    max_non_top(&row).is_some_and(|o| o < row_max(&row) - gap)
                }),
                switch_users_join: switch.iter().all(|&u| {
                    max_non_top(&r.row(u)).is_some_and(|o| o < r.get(u, nb) - gap)
                }),
                minority_stays: (0..split.m())
                    .filter(|&u| classes[u].minority && !switch.contains(&u))
                    .all(|u| 0.0 < row_max(&r.row(u)[..=nb]) - gap),
            }
        }
        _ => GeneralConditions {
            learns_new_direction: false,
            no_overhype: false,
            majority_stays: false,
            switch_users_join: false,
            minority_stays: false,
        },
    };
    let derived_alpha_condition = alpha > ((n - nb - 1) as f64 * kappa_next).sqrt();

    let truthful = LearnerModel::fit(r, alpha)?;
    let before = social_welfare(r, &truthful.recommend(1, draw)?)?;
    let collective = LearnerModel::fit(&r_tilde_matrix, alpha)?;
    let after = social_welfare(r, &collective.recommend(1, draw)?)?;

    Ok(GeneralSufficiencyReport {
        verdict: preconditions.all() && conditions.all(),
        preconditions,
        sigma_hat: s_hat,
        kappa_next,
        collective_gap,
        conditions,
        derived_alpha_condition,
        switch_users: switch,
        truthful_rank: truthful.chosen_rank,
        collective_rank: collective.chosen_rank,
        sw_before: before.social_welfare,
        sw_after: after.social_welfare,
        ratio: after.social_welfare / before.social_welfare,
    })
}

/// When `κ̲ > (n − n̄) κ / (4√2 n√n)`, checks that no larger popular prefix
/// yields a class member. Returns `None` when the premise does not hold.
/// A prefix covering every column is outside the class by convention.
pub fn no_larger_nbar_check(split: &PopularitySplit<'_>) -> Result<Option<bool>> {
    if !class_membership(split)?.in_class {
        return Err(Error::InvalidArgument(
            "the popular prefix does not place the matrix in the class".into(),
        ));
    }
    let n = split.n() as f64;
    let threshold = (n - split.n_bar as f64) * split.kappa() / (4.0 * 2f64.sqrt() * n * n.sqrt());
    if split.kappa_lower().is_nan() || split.kappa_lower() <= threshold {
        return Ok(None);
    }
    for nb in split.n_bar + 1..split.n() {
        let other = PopularitySplit::new(split.matrix, nb)?;
        if class_membership(&other)?.in_class {
            return Ok(Some(false));
        }
    }
    Ok(Some(true))
}

/// `|U_min| · R_lower + Σ_{U_maj} max r`, with `R_lower` the best popular
/// rating over minority users. `None` when majority and minority overlap or
/// no minority user exists.
pub fn sw_upper_bound(split: &PopularitySplit<'_>) -> Option<f64> {
    let classes = classify_users(split);
    let r = split.matrix;
    if classes.iter().any(|c| c.majority && c.minority) || !classes.iter().any(|c| c.minority) {
        return None;
    }
    let minority: Vec<usize> = (0..split.m()).filter(|&u| classes[u].minority).collect();
    let r_lower = minority
        .iter()
        .map(|&u| row_max(&r.row(u)[..split.n_bar]))
        .fold(f64::NEG_INFINITY, f64::max);
    let maj: f64 = (0..split.m())
        .filter(|&u| classes[u].majority)
        .map(|u| row_max(&r.row(u)))
        .sum();
    Some(minority.len() as f64 * r_lower + maj)
}
