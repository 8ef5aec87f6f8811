//! Collective uprating of a picky item: strategy application, sufficient
//! conditions, the effective-η finder and its robustness margin.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::learner::{social_welfare, LearnerModel, TieBreak};
use crate::matrix::{find_picky_items, matrix_l1_norm, BlockSpectra, GroupPartition, Interval, RatingsMatrix};

/// Majority users `collective` report `eta` for the minority item
/// `target_item`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectiveStrategy {
    pub target_item: usize,
    pub collective: Vec<usize>,
    pub eta: f64,
}

impl CollectiveStrategy {
    pub fn validate(&self, p: &GroupPartition) -> Result<()> {
        if self.collective.is_empty() {
            return Err(Error::InvalidStrategy("collective is empty".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidStrategy(format!(
                "uprating value must be positive, got {}",
                self.eta
            )));
        }
        if self.target_item >= p.n() || p.is_majority_item(self.target_item) {
            return Err(Error::InvalidStrategy(format!(
                "target item {} is not a minority item",
                self.target_item
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &u in &self.collective {
            if u >= p.m() || !p.is_majority_user(u) {
                return Err(Error::InvalidStrategy(format!(
                    "collective member {u} is not a majority user"
                )));
            }
            if !seen.insert(u) {
                return Err(Error::InvalidStrategy(format!(
                    "collective member {u} listed twice"
                )));
            }
        }
        Ok(())
    }
}

/// `R̃`: `R*` with `r̃_{u,i*} = η` for every collective member.
pub fn apply_uprating(
    r_star: &RatingsMatrix,
    p: &GroupPartition,
    s: &CollectiveStrategy,
) -> Result<RatingsMatrix> {
    p.validate_for(r_star)?;
    s.validate(p)?;
    let mut data = r_star.as_dmatrix().clone();
    for &u in &s.collective {
        data[(u, s.target_item)] = s.eta;
    }
    RatingsMatrix::from_dmatrix(data)
}

/// `AV = max_{i ∈ popular} Σ_{u ∈ coll} r_{u,i}`.
pub fn aggregate_value(r: &RatingsMatrix, coll: &[usize], popular_items: &[usize]) -> Result<f64> {
    if coll.is_empty() {
        return Err(Error::InvalidStrategy("collective is empty".into()));
    }
    if popular_items.is_empty() {
        return Err(Error::InvalidArgument("no popular items".into()));
    }
    Ok(popular_items
        .iter()
        .map(|&i| coll.iter().map(|&u| r.get(u, i)).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Parameter vector consumed by the finder and the sufficient conditions.
///
/// `n_bar` and `coll_size` are counts but are held as reals so the whole
/// vector can be perturbed continuously when probing robustness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinderInputs {
    /// `σ_{k_maj}(R*_maj)`.
    pub sigma_kmaj: f64,
    pub alpha: f64,
    pub n_bar: f64,
    /// `‖R*_{i*}‖₂²`.
    pub picky_col_sq: f64,
    /// `AV(R*, U_COLL)`.
    pub av: f64,
    pub kappa: f64,
    /// `|U_COLL|`.
    pub coll_size: f64,
}

impl FinderInputs {
    /// Computes every parameter from the true matrix. `κ` is the smallest
    /// top rating among majority users.
    pub fn from_matrix(
        r_star: &RatingsMatrix,
        p: &GroupPartition,
        target_item: usize,
        collective: &[usize],
        alpha: f64,
    ) -> Result<Self> {
        let bs = BlockSpectra::compute(r_star, p)?;
        let col = r_star.column(target_item);
        Ok(Self {
            sigma_kmaj: bs.sigma_kmaj(),
            alpha,
            n_bar: p.n_bar() as f64,
            picky_col_sq: col.iter().map(|v| v * v).sum(),
            av: aggregate_value(r_star, collective, p.majority_items())?,
            kappa: crate::learner::kappa_k(r_star, p, 1)?,
            coll_size: collective.len() as f64,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sigma_kmaj", self.sigma_kmaj),
            ("alpha", self.alpha),
            ("n_bar", self.n_bar),
            ("picky_col_sq", self.picky_col_sq),
            ("av", self.av),
            ("kappa", self.kappa),
            ("coll_size", self.coll_size),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if self.coll_size < 1.0 {
            return Err(Error::InvalidArgument("collective size must be at least 1".into()));
        }
        Ok(())
    }

    /// `z = (σ, α, n̄, s, AV, |U|)`.
    pub fn z(&self) -> [f64; 6] {
        [
            self.sigma_kmaj,
            self.alpha,
            self.n_bar,
            self.picky_col_sq,
            self.av,
            self.coll_size,
        ]
    }

    /// Copy with `z` replaced and `κ` kept.
    pub fn with_z(&self, z: [f64; 6]) -> Self {
        Self {
            sigma_kmaj: z[0],
            alpha: z[1],
            n_bar: z[2],
            picky_col_sq: z[3],
            av: z[4],
            coll_size: z[5],
            kappa: self.kappa,
        }
    }

    /// `min{σ², η²|U| + s} − η √n̄ AV`.
    pub fn gap_radicand(&self, eta: f64) -> f64 {
        (self.sigma_kmaj * self.sigma_kmaj).min(eta * eta * self.coll_size + self.picky_col_sq)
            - eta * self.n_bar.sqrt() * self.av
    }
}

/// `G(R, U_COLL, η)` from the parameter vector and `σ_1(R_min)`.
pub fn sufficient_gap_from(z: &FinderInputs, sigma1_min: f64, eta: f64) -> Option<Interval> {
    let rad = z.gap_radicand(eta);
    if rad < 0.0 {
        return None;
    }
    Interval::open(sigma1_min, rad.sqrt())
}

/// `G(R*, U_COLL, η)` for a strategy on a concrete matrix.
pub fn sufficient_gap(
    r_star: &RatingsMatrix,
    p: &GroupPartition,
    s: &CollectiveStrategy,
) -> Result<Option<Interval>> {
    s.validate(p)?;
    let z = FinderInputs::from_matrix(r_star, p, s.target_item, &s.collective, 0.0)?;
    let bs = BlockSpectra::compute(r_star, p)?;
    Ok(sufficient_gap_from(&z, bs.sigma1_min(), s.eta))
}

/// Named sufficient conditions for a collective uprating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionCheck {
    /// `0 < η < κ`.
    pub eta_below_kappa: bool,
    /// `α² < min{σ², η²|U| + s} − η √n̄ AV`.
    pub alpha_below_gap: bool,
    /// `α > σ_1(R_min)`.
    pub alpha_above_minority: bool,
    pub verdict: bool,
    /// `f(z; η)`: slack of the second condition.
    pub slack: f64,
}

pub fn check_sufficient_conditions(z: &FinderInputs, sigma1_min: f64, eta: f64) -> ConditionCheck {
    let slack = robustness_f(z, eta);
    let eta_below_kappa = eta > 0.0 && eta < z.kappa;
    let alpha_below_gap = z.alpha * z.alpha < z.gap_radicand(eta);
    let alpha_above_minority = z.alpha > sigma1_min;
    ConditionCheck {
        eta_below_kappa,
        alpha_below_gap,
        alpha_above_minority,
        verdict: eta_below_kappa && alpha_below_gap && alpha_above_minority,
        slack,
    }
}

/// Effective-η finder. Returns a value meeting the sufficient conditions,
/// or 0 when none exists. Comparisons are exact; boundary equality falls to
/// the "no" branch. The `d < 0` branch cannot occur when
/// `α > σ_1(R_min) ≥ ‖R*_{i*}‖₂` and is kept for inputs outside that
/// regime.
pub fn find_eta(z: &FinderInputs) -> Result<f64> {
    z.validate()?;
    if z.av == 0.0 {
        return Err(Error::Undefined(
            "aggregate value is zero; the finder divides by it".into(),
        ));
    }
    let u = z.coll_size;
    let root_av = z.n_bar.sqrt() * z.av;
    let a2 = z.alpha * z.alpha;
    let mut n_up = ((z.sigma_kmaj * z.sigma_kmaj - a2) / root_av).min(z.kappa);
    let d = z.n_bar * z.av * z.av + 4.0 * u * (a2 - z.picky_col_sq);
    let n_lo = if d < 0.0 {
        n_up / 2.0
    } else {
        (root_av + d.sqrt()) / (2.0 * u)
    };
    if n_lo < n_up {
        return Ok((n_lo + n_up) / 2.0);
    }
    if d >= 0.0 {
        n_up = ((root_av - d.sqrt()) / (2.0 * u)).min(n_up);
    }
    Ok(if n_up > 0.0 { n_up / 2.0 } else { 0.0 })
}

/// `f(z; η) = min(σ², η²|U| + s) − η √n̄ AV − α²`.
pub fn robustness_f(z: &FinderInputs, eta: f64) -> f64 {
    z.gap_radicand(eta) - z.alpha * z.alpha
}

/// `L(R; η) = √(4‖R‖₂² + η‖R‖₁²/4 + η² n + max{4‖R‖₂², 1 + η⁴})`.
pub fn robustness_l(eta: f64, l1_norm: f64, l2_norm: f64, n: usize) -> f64 {
    let four_l2 = 4.0 * l2_norm * l2_norm;
    (four_l2 + eta * l1_norm * l1_norm / 4.0 + eta * eta * n as f64 + four_l2.max(1.0 + eta.powi(4)))
        .sqrt()
}

/// Radius in parameter space within which `η̂` keeps `f > 0`:
/// `f(ẑ; η̂) / L(R*; η̂)`. A value exactly on the boundary (`f = 0`) gives
/// a zero margin; `f < 0` means `η̂` was not effective to begin with.
pub fn robustness_margin(
    z_hat: &FinderInputs,
    eta_hat: f64,
    l1_norm: f64,
    l2_norm: f64,
    n: usize,
) -> Result<f64> {
    if eta_hat.is_nan() || eta_hat <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "uprating value must be positive, got {eta_hat}"
        )));
    }
    let f = robustness_f(z_hat, eta_hat);
    if f < 0.0 {
        return Err(Error::Infeasible(format!(
            "η = {eta_hat} violates the sufficient conditions (f = {f})"
        )));
    }
    Ok(f / robustness_l(eta_hat, l1_norm, l2_norm, n))
}

/// Per-user change between the truthful and collective runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecommendationDiff {
    pub user: usize,
    pub before: Vec<usize>,
    pub after: Vec<usize>,
    pub welfare_before: f64,
    pub welfare_after: f64,
}

/// Everything known about one collective strategy on one matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SufficiencyReport {
    pub inputs: FinderInputs,
    pub eta: f64,
    pub sigma1_min: f64,
    pub gap_interval: Option<Interval>,
    pub conditions: ConditionCheck,
    pub truthful_rank: usize,
    pub collective_rank: usize,
    pub sw_before: f64,
    pub sw_after: f64,
    /// `sw_after / sw_before`.
    pub ratio: f64,
    pub u_en_before: f64,
    pub u_en_after: f64,
    pub per_user_before: Vec<f64>,
    pub per_user_after: Vec<f64>,
    /// Users whose recommendation changed.
    pub diffs: Vec<RecommendationDiff>,
    /// Whether the target is a picky item of `R*`.
    pub target_is_picky: bool,
}

/// Evaluates the sufficient conditions and simulates both the truthful and
/// the collective pipelines with the same tie-breaking.
pub fn evaluate_strategy(
    r_star: &RatingsMatrix,
    p: &GroupPartition,
    s: &CollectiveStrategy,
    alpha: f64,
    k_items: usize,
    draw: TieBreak,
) -> Result<SufficiencyReport> {
    let r_tilde = apply_uprating(r_star, p, s)?;
    let inputs = FinderInputs::from_matrix(r_star, p, s.target_item, &s.collective, alpha)?;
    let sigma1_min = BlockSpectra::compute(r_star, p)?.sigma1_min();
    let conditions = check_sufficient_conditions(&inputs, sigma1_min, s.eta);
    let gap_interval = sufficient_gap_from(&inputs, sigma1_min, s.eta);

    let truthful = LearnerModel::fit(r_star, alpha)?;
    let before = truthful.recommend(k_items, draw)?;
    let wb = social_welfare(r_star, &before)?.with_engagement(r_star);
    let collective = LearnerModel::fit(&r_tilde, alpha)?;
    let after = collective.recommend(k_items, draw)?;
    let wa = social_welfare(r_star, &after)?.with_engagement(&r_tilde);

    let diffs = (0..r_star.rows())
        .filter(|&u| before.users[u].chosen != after.users[u].chosen)
        .map(|u| RecommendationDiff {
            user: u,
            before: before.users[u].chosen.clone(),
            after: after.users[u].chosen.clone(),
            welfare_before: wb.per_user_welfare[u],
            welfare_after: wa.per_user_welfare[u],
        })
        .collect();
    let target_is_picky = find_picky_items(r_star, p)?
        .iter()
        .any(|pi| pi.item == s.target_item);
    Ok(SufficiencyReport {
        inputs,
        eta: s.eta,
        sigma1_min,
        gap_interval,
        conditions,
        truthful_rank: truthful.chosen_rank,
        collective_rank: collective.chosen_rank,
        sw_before: wb.social_welfare,
        sw_after: wa.social_welfare,
        ratio: wa.social_welfare / wb.social_welfare,
        u_en_before: wb.u_en.unwrap_or_default(),
        u_en_after: wa.u_en.unwrap_or_default(),
        per_user_before: wb.per_user_welfare,
        per_user_after: wa.per_user_welfare,
        diffs,
        target_is_picky,
    })
}

/// `‖R‖₁` and `‖R‖₂` for the robustness margin.
pub fn norms(r: &RatingsMatrix) -> Result<(f64, f64)> {
    Ok((
        matrix_l1_norm(r),
        crate::matrix::spectral_norm(r.as_dmatrix())?,
    ))
}
