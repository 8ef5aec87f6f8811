//! The α-loss tolerant learner: rank selection, truncated-SVD estimation,
//! top-1 and top-k recommendation with popularity tie-breaking, welfare and
//! learner utilities.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{
    numeric_rank, sigma, singular_values_of, spectral_norm, GroupPartition, RatingsMatrix,
    SpectralSummary, Svd,
};

/// Relative scale of the rating tie tolerance.
pub const TIE_RTOL: f64 = 1e-9;

/// Tie tolerance for a matrix whose largest singular value is `sigma1`.
pub fn tie_tolerance(sigma1: f64) -> f64 {
    TIE_RTOL * sigma1.max(1.0)
}

/// Total variation retained by a rank-`k` truncation, from a descending
/// spectrum.
pub fn tvr_from_sigma(descending: &[f64], k: usize) -> Result<f64> {
    let rank = numeric_rank(descending);
    if k == 0 || k > rank {
        return Err(Error::RankOutOfRange { k, max: rank });
    }
    let total: f64 = descending[..rank].iter().sum();
    let kept: f64 = descending[..k].iter().sum();
    Ok(kept / total)
}

/// `TVR(k) = Σ_{j≤k} σ_j / Σ_{j≤rank} σ_j`.
pub fn tvr(r: &RatingsMatrix, k: usize) -> Result<f64> {
    tvr_from_sigma(&singular_values_of(r.as_dmatrix())?, k)
}

/// Minimal `k ≥ 1` with `σ_{k+1} ≤ α`, from a descending spectrum.
///
/// Singular values past the numeric rank count as zero, and a singular
/// value within the tie tolerance of `α` counts as equal to it.
pub fn choose_rank_from_sigma(descending: &[f64], alpha: f64) -> usize {
    let rank = numeric_rank(descending);
    let tol = tie_tolerance(sigma(descending, 1));
    let effective = |j: usize| if j <= rank { sigma(descending, j) } else { 0.0 };
    (1..=rank.max(1))
        .find(|&k| effective(k + 1) <= alpha + tol)
        .unwrap_or(rank.max(1))
}

/// Rank chosen by the α-loss tolerant learner on `r`.
pub fn choose_rank(r: &RatingsMatrix, alpha: f64) -> Result<usize> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "exploration limit must be nonnegative, got {alpha}"
        )));
    }
    Ok(choose_rank_from_sigma(
        &singular_values_of(r.as_dmatrix())?,
        alpha,
    ))
}

/// Best rank-`k` Frobenius approximation of `r`.
pub fn truncate(r: &RatingsMatrix, k: usize) -> Result<RatingsMatrix> {
    let svd = Svd::compute(r.as_dmatrix())?;
    truncate_svd(&svd, k)
}

fn truncate_svd(svd: &Svd, k: usize) -> Result<RatingsMatrix> {
    let rank = numeric_rank(&svd.singular_values);
    if k == 0 || k > rank {
        return Err(Error::RankOutOfRange { k, max: rank });
    }
    Ok(RatingsMatrix::from_estimate(svd.truncated(k)))
}

/// Learner state after the learning phase.
#[derive(Debug, Clone)]
pub struct LearnerModel {
    pub alpha: f64,
    pub chosen_rank: usize,
    pub truncated: RatingsMatrix,
    /// Spectrum of the revealed matrix the model was fit on.
    pub spectrum: SpectralSummary,
}

impl LearnerModel {
    /// Chooses `k*` for `r_tilde` and truncates to it.
    pub fn fit(r_tilde: &RatingsMatrix, alpha: f64) -> Result<Self> {
        if alpha.is_nan() || alpha < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "exploration limit must be nonnegative, got {alpha}"
            )));
        }
        let svd = Svd::compute(r_tilde.as_dmatrix())?;
        let chosen_rank = choose_rank_from_sigma(&svd.singular_values, alpha);
        let truncated = truncate_svd(&svd, chosen_rank)?;
        Ok(Self {
            alpha,
            chosen_rank,
            truncated,
            spectrum: svd.summary(),
        })
    }

    /// Recommends from the truncated estimate. The tie tolerance is scaled
    /// by `σ_1(R̂)`, which equals the revealed matrix's `σ_1`.
    pub fn recommend(&self, k_items: usize, draw: TieBreak) -> Result<RecommendationOutcome> {
        recommend_scaled(&self.truncated, k_items, draw, self.spectrum.sigma(1))
    }
}

/// How the final member of a popularity tie is selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TieBreak {
    /// Uniform draw from a ChaCha8 stream with this seed, users in index
    /// order.
    Seeded(u64),
    /// Lexicographically smallest admissible set.
    Smallest,
}

/// The family of sets `fixed ∪ S` with `S` any `pick`-subset of `pool`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SetFamily {
    pub fixed: Vec<usize>,
    pub pool: Vec<usize>,
    pub pick: usize,
}

impl SetFamily {
    /// Items appearing in at least one member set, sorted.
    pub fn members(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.fixed.iter().chain(&self.pool).copied().collect();
        v.sort_unstable();
        v
    }

    /// True iff `set` (any order) is a member of the family.
    pub fn contains_set(&self, set: &[usize]) -> bool {
        if set.len() != self.fixed.len() + self.pick {
            return false;
        }
        self.fixed.iter().all(|i| set.contains(i))
            && set
                .iter()
                .filter(|i| !self.fixed.contains(i))
                .all(|i| self.pool.contains(i))
    }
}

/// Recommendation for one user.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserRecommendation {
    /// Sets of `k` items maximizing the estimated row sum.
    pub ties: SetFamily,
    /// Members of `ties` that also maximize summed column popularity.
    pub popular: SetFamily,
    /// The drawn set, sorted.
    pub chosen: Vec<usize>,
}

impl UserRecommendation {
    /// `I_top(u)`: items in some optimal set.
    pub fn tie_set(&self) -> Vec<usize> {
        self.ties.members()
    }

    /// `I_top^pop(u)`: items in some most-popular optimal set.
    pub fn pop_tie_set(&self) -> Vec<usize> {
        self.popular.members()
    }

    /// The recommended item for top-1 outcomes (first item otherwise).
    pub fn item(&self) -> usize {
        self.chosen[0]
    }
}

/// Per-user recommendations for a whole matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendationOutcome {
    pub k_items: usize,
    pub users: Vec<UserRecommendation>,
    /// Users whose estimated row is entirely negative. Selection falls back
    /// to the usual rule, but such rows cannot arise from nonnegative data
    /// under the model assumptions, so they are reported.
    pub negative_rows: Vec<usize>,
    /// Column popularity (absolute column sums) of the estimate.
    pub popularity: Vec<f64>,
}

impl RecommendationOutcome {
    /// Top-1 items, one per user.
    pub fn items(&self) -> Vec<usize> {
        self.users.iter().map(UserRecommendation::item).collect()
    }
}

/// Top-`k_items` recommendation from `r_hat` with popularity tie-breaking.
pub fn recommend(r_hat: &RatingsMatrix, k_items: usize, draw: TieBreak) -> Result<RecommendationOutcome> {
    let s1 = spectral_norm(r_hat.as_dmatrix())?;
    recommend_scaled(r_hat, k_items, draw, s1)
}

fn recommend_scaled(
    r_hat: &RatingsMatrix,
    k_items: usize,
    draw: TieBreak,
    sigma1: f64,
) -> Result<RecommendationOutcome> {
    let n = r_hat.cols();
    if k_items == 0 || k_items > n {
        return Err(Error::InvalidArgument(format!(
            "k_items = {k_items} must lie in 1..={n}"
        )));
    }
    let tol = tie_tolerance(sigma1);
    let popularity: Vec<f64> = (0..n).map(|i| r_hat.column_abs_sum(i)).collect();
    let pop_tol = TIE_RTOL * popularity.iter().copied().fold(1.0, f64::max);
    let mut rng = match draw {
        TieBreak::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        TieBreak::Smallest => None,
    };
    let mut users = Vec::with_capacity(r_hat.rows());
    let mut negative_rows = Vec::new();
    for u in 0..r_hat.rows() {
        let row = r_hat.row(u);
        if row.iter().all(|&v| v < -tol) {
            negative_rows.push(u);
        }
        let ties = boundary_family(&row, k_items, tol);
        let pool_pop: Vec<f64> = ties.pool.iter().map(|&i| popularity[i]).collect();
        let inner = boundary_family(&pool_pop, ties.pick, pop_tol);
        let popular = SetFamily {
            fixed: sorted(
                ties.fixed
                    .iter()
                    .copied()
                    .chain(inner.fixed.iter().map(|&j| ties.pool[j])),
            ),
            pool: sorted(inner.pool.iter().map(|&j| ties.pool[j])),
            pick: inner.pick,
        };
        let drawn: Vec<usize> = match rng.as_mut() {
            Some(rng) => sample(rng, popular.pool.len(), popular.pick)
                .into_iter()
                .map(|j| popular.pool[j])
                .collect(),
            None => popular.pool[..popular.pick].to_vec(),
        };
        let chosen = sorted(popular.fixed.iter().copied().chain(drawn));
        users.push(UserRecommendation {
            ties,
            popular,
            chosen,
        });
    }
    Ok(RecommendationOutcome {
        k_items,
        users,
        negative_rows,
        popularity,
    })
}

fn sorted(it: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = it.collect();
    v.sort_unstable();
    v
}

/// Sets of `k` indices maximizing the sum of `values`, up to `tol`.
///
/// Sorting places the `k`-th largest value `b` at the selection boundary.
/// Indices strictly above `b` (beyond `tol`) belong to every optimal set;
/// indices within `tol` of `b` are interchangeable. No subset enumeration
/// is needed.
fn boundary_family(values: &[f64], k: usize, tol: f64) -> SetFamily {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let b = values[order[k - 1]];
    let fixed = sorted(order.iter().copied().filter(|&i| values[i] > b + tol));
    let pool = sorted(order.iter().copied().filter(|&i| (values[i] - b).abs() <= tol));
    let pick = k - fixed.len();
    SetFamily { fixed, pool, pick }
}

/// Welfare of an outcome under the true preferences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WelfareReport {
    pub social_welfare: f64,
    pub per_user_welfare: Vec<f64>,
    /// Personalization-accuracy utility: social welfare on `R*`.
    pub u_ben: f64,
    /// Engagement utility of the revealed matrix, when attached.
    pub u_en: Option<f64>,
}

impl WelfareReport {
    /// Attaches the engagement utility of the revealed matrix.
    pub fn with_engagement(mut self, r_tilde: &RatingsMatrix) -> Self {
        self.u_en = Some(utility_en(r_tilde));
        self
    }
}

/// `SW = Σ_u r*_{u,Top(u)}`; for top-k outcomes each user contributes the
/// sum over her chosen set.
pub fn social_welfare(r_star: &RatingsMatrix, outcome: &RecommendationOutcome) -> Result<WelfareReport> {
    if outcome.users.len() != r_star.rows() || outcome.popularity.len() != r_star.cols() {
        return Err(Error::DimensionMismatch(format!(
            "outcome covers {}x{}, matrix is {}x{}",
            outcome.users.len(),
            outcome.popularity.len(),
            r_star.rows(),
            r_star.cols()
        )));
    }
    let per_user_welfare: Vec<f64> = outcome
        .users
        .iter()
        .enumerate()
        .map(|(u, rec)| rec.chosen.iter().map(|&i| r_star.get(u, i)).sum())
        .collect();
    let social_welfare = per_user_welfare.iter().sum();
    Ok(WelfareReport {
        social_welfare,
        per_user_welfare,
        u_ben: social_welfare,
        u_en: None,
    })
}

/// `U_BEN`: social welfare measured on `R*`.
pub fn utility_ben(r_star: &RatingsMatrix, outcome: &RecommendationOutcome) -> Result<f64> {
    Ok(social_welfare(r_star, outcome)?.u_ben)
}

/// `U_EN = Σ_{u,i} |r̃_{u,i}|`.
pub fn utility_en(r_tilde: &RatingsMatrix) -> f64 {
    r_tilde.as_dmatrix().iter().map(|v| v.abs()).sum()
}

/// `κ(k)`: the smallest `k`-th largest rating over majority users.
pub fn kappa_k(r_star: &RatingsMatrix, p: &GroupPartition, k: usize) -> Result<f64> {
    let n = r_star.cols();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={n}")));
    }
    if p.majority_users().is_empty() {
        return Err(Error::InvalidPartition("no majority users".into()));
    }
    Ok(p.majority_users()
        .iter()
        .map(|&u| {
            let mut row = r_star.row(u);
            row.sort_by(|a, b| b.total_cmp(a));
            row[k - 1]
        })
        .fold(f64::INFINITY, f64::min))
}

/// Exact argmax set of a row of true ratings.
pub fn top_items(row: &[f64]) -> Vec<usize> {
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..row.len()).filter(|&i| row[i] == best).collect()
}

/// True iff `set` attains the largest possible sum of `|set|` entries of
/// `row`, up to a relative rounding slack.
pub fn is_true_top_k(row: &[f64], set: &[usize]) -> bool {
    let mut sorted_row = row.to_vec();
    sorted_row.sort_by(|a, b| b.total_cmp(a));
    let best: f64 = sorted_row[..set.len()].iter().sum();
    let got: f64 = set.iter().map(|&i| row[i]).sum();
    let scale = sorted_row.iter().map(|v| v.abs()).fold(1.0, f64::max);
    got >= best - 1e-12 * scale * set.len() as f64
}
