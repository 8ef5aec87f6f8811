//! Command implementations: pure functions from scenarios to reports.

use std::collections::BTreeMap;

use anyhow::{bail, ensure, Context, Result};
use colrec::collective::{
    apply_uprating, check_sufficient_conditions, evaluate_strategy, find_eta, norms,
    robustness_f, robustness_l, robustness_margin, CollectiveStrategy, ConditionCheck,
    FinderInputs,
};
use colrec::learner::{
    social_welfare, tvr_from_sigma, utility_en, LearnerModel, RecommendationOutcome, TieBreak,
};
use colrec::matrix::{find_picky_items, singular_value_gap, BlockSpectra};
use colrec::mc::{
    explore_per_user, omega_satisfies_prop22, prop22_hold_rate, rank, reduce_solution,
    sparsest_majority_completion, PartialMatrix,
};
use colrec::popgap::{self, PopularitySplit};
use colrec::{GroupPartition, RatingsMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::config::{materialize, EtaSpec, Scenario, ScenarioSpec, Strategy, Structure};
use crate::report::*;

fn side(model: &LearnerModel, out: &RecommendationOutcome, r_star: &RatingsMatrix, u_en: f64) -> Result<RunSide> {
    let w = social_welfare(r_star, out)?;
    let spectrum = &model.spectrum.singular_values;
    let tvr = if model.chosen_rank <= model.spectrum.numeric_rank {
        tvr_from_sigma(spectrum, model.chosen_rank)?
    } else {
        1.0
    };
    Ok(RunSide {
        rank: model.chosen_rank,
        tvr,
        social_welfare: w.social_welfare,
        u_ben: w.u_ben,
        u_en,
        negative_rows: out.negative_rows.clone(),
    })
}

fn condition_verdicts(c: &ConditionCheck) -> BTreeMap<String, bool> {
    BTreeMap::from([
        ("eta_below_kappa".to_string(), c.eta_below_kappa),
        ("alpha_below_gap".to_string(), c.alpha_below_gap),
        ("alpha_above_minority".to_string(), c.alpha_above_minority),
        ("sufficient".to_string(), c.verdict),
    ])
}

/// Structure of a block partition at exploration limit `alpha`.
pub fn block_section(r: &RatingsMatrix, p: &GroupPartition, alpha: f64) -> Result<BlockSection> {
    let bs = BlockSpectra::compute(r, p)?;
    let gap = singular_value_gap(r, p)?;
    Ok(BlockSection {
        majority_users: p.m_bar(),
        majority_items: p.n_bar(),
        k_maj: bs.k_maj(),
        majority_spectrum: bs.majority.singular_values,
        minority_spectrum: bs.minority.singular_values,
        gap_interval: gap.map(Range::from),
        alpha_in_gap: gap.is_some_and(|g| g.contains(alpha)),
        picky_items: find_picky_items(r, p)?.iter().map(|pi| pi.item).collect(),
    })
}

/// Popularity-gap structure at exploration limit `alpha`.
pub fn popularity_section(r: &RatingsMatrix, n_bar: usize, alpha: f64) -> Result<PopularitySection> {
    let split = PopularitySplit::new(r, n_bar)?;
    let mem = popgap::class_membership(&split)?;
    let b = popgap::singular_bounds_check(&split)?;
    let gap = popgap::gap_interval(&split).ok().flatten();
    let projection_gap = popgap::projection_gap(&split)?;
    let projection_bound = popgap::projection_bound(&split)?;
    let no_larger_prefix = if mem.in_class {
        popgap::no_larger_nbar_check(&split)?
    } else {
        None
    };
    let verdicts = BTreeMap::from([
        ("in_class".to_string(), mem.in_class),
        ("exclusive_classes".to_string(), mem.exclusive_classes),
        ("minority_nonempty".to_string(), mem.minority_nonempty),
        ("necessary_inequality".to_string(), mem.necessary_inequality),
        ("singular_lower_bound".to_string(), b.lower_ok),
        ("singular_upper_bound".to_string(), b.upper_ok),
        (
            "projection_within_bound".to_string(),
            projection_bound.is_some_and(|pb| projection_gap <= pb),
        ),
        (
            "delta_feasible".to_string(),
            popgap::delta_interval(&split).is_some_and(|d| d.holds()),
        ),
    ]);
    Ok(PopularitySection {
        n_bar,
        kappa: mem.kappa,
        kappa_lower: mem.kappa_lower,
        sigma_nbar_popular: mem.sigma_nbar_popular,
        ratings_gap: mem.delta_gap,
        gap_interval: gap.map(Range::from),
        alpha_in_gap: gap.is_some_and(|g| g.contains(alpha)),
        sigma_nbar: b.sigma_nbar,
        sigma_nbar_next: b.sigma_nbar_next,
        singular_lower_bound: b.lower_bound,
        singular_upper_bound: b.upper_bound,
        projection_gap,
        projection_bound,
        switch_users: popgap::switch_users(&split),
        no_larger_prefix,
        verdicts,
    })
}

fn user_classes(sc: &Scenario) -> Result<Vec<String>> {
    Ok(match &sc.structure {
        Structure::Block(p) => (0..sc.matrix.rows())
            .map(|u| if p.is_majority_user(u) { "majority" } else { "minority" }.to_string())
            .collect(),
        Structure::Popularity { n_bar } => {
            let split = PopularitySplit::new(&sc.matrix, *n_bar)?;
            popgap::classify_users(&split)
                .iter()
                .map(|c| match (c.majority, c.minority) {
                    (true, true) => "mixed",
                    (true, false) => "majority",
                    (false, true) => "minority",
                    (false, false) => "none",
                }
                .to_string())
                .collect()
        }
    })
}

/// Finder inputs of an uprating scenario.
fn finder_inputs(sc: &Scenario, alpha: f64) -> Result<(FinderInputs, f64)> {
    let Some(Strategy::Uprate { target_item, collective, .. }) = &sc.strategy else {
        bail!("scenario {} has no uprating strategy", sc.id);
    };
    let p = sc.partition()?;
    let z = FinderInputs::from_matrix(&sc.matrix, p, *target_item, collective, alpha)?;
    let sigma1_min = BlockSpectra::compute(&sc.matrix, p)?.sigma1_min();
    Ok((z, sigma1_min))
}

fn finder_section(z: &FinderInputs, sigma1_min: Option<f64>) -> Result<FinderSection> {
    let eta = find_eta(z)?;
    let c = check_sufficient_conditions(z, sigma1_min.unwrap_or(0.0), eta);
    let mut verdicts = condition_verdicts(&c);
    if sigma1_min.is_none() {
        verdicts.remove("alpha_above_minority");
        verdicts.insert("sufficient".into(), c.eta_below_kappa && c.alpha_below_gap);
    }
    Ok(FinderSection {
        inputs: (*z).into(),
        eta,
        sigma1_min,
        verdicts,
        slack: c.slack,
    })
}

/// Uprating value of a scenario: the fixed value, or the finder's output.
fn resolve_eta(sc: &Scenario, alpha: f64) -> Result<(f64, Option<FinderSection>)> {
    let Some(Strategy::Uprate { eta, .. }) = &sc.strategy else {
        bail!("scenario {} has no uprating strategy", sc.id);
    };
    match eta {
        EtaSpec::Value(v) => Ok((*v, None)),
        EtaSpec::Keyword(_) => {
            let (z, s1) = finder_inputs(sc, alpha)?;
            let f = finder_section(&z, Some(s1))?;
            Ok((f.eta, Some(f)))
        }
    }
}

fn robustness_section(r: &RatingsMatrix, z: &FinderInputs, eta: f64) -> Result<RobustnessSection> {
    let (l1, l2) = norms(r)?;
    let n = r.cols();
    Ok(RobustnessSection {
        eta,
        f: robustness_f(z, eta),
        l: robustness_l(eta, l1, l2, n),
        l1_norm: l1,
        l2_norm: l2,
        margin: robustness_margin(z, eta, l1, l2, n)?,
    })
}

fn labels(items: &[String], set: &[usize]) -> Vec<String> {
    set.iter().map(|&i| items[i].clone()).collect()
}

/// Truthful baseline and, when a strategy is present, the collective run.
pub fn run(sc: &Scenario) -> Result<RunReport> {
    let alpha = sc.alpha()?;
    let r = &sc.matrix;
    let draw = TieBreak::Seeded(sc.seed);
    let model = LearnerModel::fit(r, alpha).context("truthful run")?;
    let before = model.recommend(sc.top_k, draw)?;
    let truthful = side(&model, &before, r, utility_en(r))?;
    let before_w = social_welfare(r, &before)?.per_user_welfare;

    let (block, popularity) = match &sc.structure {
        Structure::Block(p) => (Some(block_section(r, p, alpha)?), None),
        Structure::Popularity { n_bar } => (None, Some(popularity_section(r, *n_bar, alpha)?)),
    };

    let mut finder = None;
    let mut after = None;
    let collective = match &sc.strategy {
        None => None,
        Some(Strategy::Uprate { target_item, collective, .. }) => {
            let (eta, f) = resolve_eta(sc, alpha)?;
            finder = f;
            if eta > 0.0 {
                let p = sc.partition()?;
                let strategy = CollectiveStrategy {
                    target_item: *target_item,
                    collective: collective.clone(),
                    eta,
                };
                let rep = evaluate_strategy(r, p, &strategy, alpha, sc.top_k, draw)
                    .context("collective run")?;
                let r_tilde = apply_uprating(r, p, &strategy)?;
                let cmodel = LearnerModel::fit(&r_tilde, alpha)?;
                let out = cmodel.recommend(sc.top_k, draw)?;
                let run = side(&cmodel, &out, r, utility_en(&r_tilde))?;
                let after_w = social_welfare(r, &out)?.per_user_welfare;
                let mut verdicts = condition_verdicts(&rep.conditions);
                verdicts.insert("target_is_picky".into(), rep.target_is_picky);
                verdicts.insert("rank_increased".into(), run.rank == truthful.rank + 1);
                verdicts.insert("pareto".into(), pareto(&before_w, &after_w));
                let (m, n) = r.shape();
                let d_en = run.u_en - truthful.u_en;
                let tol = (m * n) as f64 * f64::EPSILON * (run.u_en + truthful.u_en);
                verdicts.insert(
                    "engagement_identity".into(),
                    (d_en - eta * collective.len() as f64).abs() <= tol,
                );
                let robustness = if rep.conditions.verdict {
                    Some(robustness_section(r, &rep.inputs, eta)?)
                } else {
                    None
                };
                let section = CollectiveSection {
                    kind: "uprate".into(),
                    target_item: *target_item,
                    eta: Some(eta),
                    collective_size: collective.len(),
                    spectrum: cmodel.spectrum.singular_values.clone(),
                    sw_delta: run.social_welfare - truthful.social_welfare,
                    u_en_delta: d_en,
                    ratio: ratio(run.social_welfare, truthful.social_welfare),
                    sufficient_gap: rep.gap_interval.map(Range::from),
                    sigma_hat: None,
                    verdicts,
                    robustness,
                    changed_users: changed(&before, &out),
                    run,
                };
                after = Some((out, after_w));
                Some(section)
            } else {
                None
            }
        }
        Some(Strategy::Column(values)) => {
            let Structure::Popularity { n_bar } = sc.structure else {
                bail!("a collective column needs a popular-prefix structure");
            };
            let split = PopularitySplit::new(r, n_bar)?;
            let g = popgap::check_general_sufficiency(&split, values, alpha, draw)
                .context("collective run")?;
            let r_tilde = popgap::apply_general(&split, values)?;
            let cmodel = LearnerModel::fit(&r_tilde, alpha)?;
            let out = cmodel.recommend(sc.top_k, draw)?;
            let run = side(&cmodel, &out, r, utility_en(&r_tilde))?;
            let after_w = social_welfare(r, &out)?.per_user_welfare;
            let pre = &g.preconditions;
            let c = &g.conditions;
            let verdicts = BTreeMap::from([
                ("in_class".to_string(), pre.in_class),
                ("exclusive_classes".to_string(), pre.exclusive_classes),
                ("minority_nonempty".to_string(), pre.minority_nonempty),
                ("delta_feasible".to_string(), pre.delta_feasible),
                ("alpha_in_gap".to_string(), pre.alpha_in_gap),
                ("minority_unchanged".to_string(), pre.minority_unchanged),
                ("only_uprates".to_string(), pre.only_uprates),
                ("learns_new_direction".to_string(), c.learns_new_direction),
                ("no_overhype".to_string(), c.no_overhype),
                ("majority_stays".to_string(), c.majority_stays),
                ("switch_users_join".to_string(), c.switch_users_join),
                ("minority_stays".to_string(), c.minority_stays),
                ("derived_alpha_condition".to_string(), g.derived_alpha_condition),
                ("sufficient".to_string(), g.verdict),
                ("welfare_improved".to_string(), run.social_welfare > truthful.social_welfare),
            ]);
            let section = CollectiveSection {
                kind: "column".into(),
                target_item: n_bar,
                eta: None,
                collective_size: (0..r.rows()).filter(|&u| values[u] != r.get(u, n_bar)).count(),
                spectrum: cmodel.spectrum.singular_values.clone(),
                sw_delta: run.social_welfare - truthful.social_welfare,
                u_en_delta: run.u_en - truthful.u_en,
                ratio: ratio(run.social_welfare, truthful.social_welfare),
                sufficient_gap: None,
                sigma_hat: g.sigma_hat,
                verdicts,
                robustness: None,
                changed_users: changed(&before, &out),
                run,
            };
            after = Some((out, after_w));
            Some(section)
        }
    };

    let classes = user_classes(sc)?;
    let per_user = (0..r.rows())
        .map(|u| UserRow {
            user: sc.users[u].clone(),
            class: classes[u].clone(),
            truthful_items: labels(&sc.items, &before.users[u].chosen),
            truthful_welfare: before_w[u],
            collective_items: after.as_ref().map(|(o, _)| labels(&sc.items, &o.users[u].chosen)),
            collective_welfare: after.as_ref().map(|(_, w)| w[u]),
        })
        .collect();

    Ok(RunReport {
        scenario_id: sc.id.clone(),
        family: sc.family.to_string(),
        seed: sc.seed,
        users: r.rows(),
        items: r.cols(),
        alpha,
        top_k: sc.top_k,
        spectrum: model.spectrum.singular_values.clone(),
        block,
        popularity,
        truthful,
        finder,
        collective,
        per_user,
    })
}

fn pareto(before: &[f64], after: &[f64]) -> bool {
    before
        .iter()
        .zip(after)
        .all(|(b, a)| *a >= b - 1e-9 * b.abs().max(1.0))
}

fn ratio(after: f64, before: f64) -> Option<f64> {
    (before != 0.0).then(|| after / before)
}

fn changed(a: &RecommendationOutcome, b: &RecommendationOutcome) -> usize {
    a.users
        .iter()
        .zip(&b.users)
        .filter(|(x, y)| x.chosen != y.chosen)
        .count()
}

/// Finder on a scenario's uprating strategy.
pub fn find_eta_for(sc: &Scenario) -> Result<FinderSection> {
    let (z, s1) = finder_inputs(sc, sc.alpha()?)?;
    finder_section(&z, Some(s1))
}

/// Finder on explicit parameters.
pub fn find_eta_raw(z: FinderInputsDoc) -> Result<FinderSection> {
    finder_section(&z.into(), None)
}

/// Structural checks and strategy conditions without simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CheckReport {
    pub scenario_id: String,
    pub alpha: f64,
    pub block: Option<BlockSection>,
    pub popularity: Option<PopularitySection>,
    pub eta: Option<f64>,
    pub strategy_verdicts: Option<BTreeMap<String, bool>>,
}

pub fn check(sc: &Scenario) -> Result<CheckReport> {
    let alpha = sc.alpha()?;
    let r = &sc.matrix;
    let (block, popularity) = match &sc.structure {
        Structure::Block(p) => (Some(block_section(r, p, alpha)?), None),
        Structure::Popularity { n_bar } => (None, Some(popularity_section(r, *n_bar, alpha)?)),
    };
    let (eta, strategy_verdicts) = match &sc.strategy {
        None => (None, None),
        Some(Strategy::Uprate { .. }) => {
            let (eta, _) = resolve_eta(sc, alpha)?;
            let (z, s1) = finder_inputs(sc, alpha)?;
            (Some(eta), Some(condition_verdicts(&check_sufficient_conditions(&z, s1, eta))))
        }
        Some(Strategy::Column(values)) => {
            let Structure::Popularity { n_bar } = sc.structure else {
                bail!("a collective column needs a popular-prefix structure");
            };
            let split = PopularitySplit::new(r, n_bar)?;
            let g = popgap::check_general_sufficiency(&split, values, alpha, TieBreak::Seeded(sc.seed))?;
            let v = BTreeMap::from([
                ("preconditions".to_string(), g.preconditions.all()),
                ("conditions".to_string(), g.conditions.all()),
                ("sufficient".to_string(), g.verdict),
            ]);
            (None, Some(v))
        }
    };
    Ok(CheckReport {
        scenario_id: sc.id.clone(),
        alpha,
        block,
        popularity,
        eta,
        strategy_verdicts,
    })
}

/// Robustness margin with uniform probes inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RobustnessReport {
    pub scenario_id: String,
    pub inputs: FinderInputsDoc,
    pub robustness: RobustnessSection,
    pub probes: usize,
    /// Probes after which `η` still meets the gap condition and `η < κ`.
    pub probes_effective: usize,
}

pub fn robustness(sc: &Scenario, probes: usize) -> Result<RobustnessReport> {
    let alpha = sc.alpha()?;
    let (eta, _) = resolve_eta(sc, alpha)?;
    ensure!(eta > 0.0, "the finder found no effective uprating value");
    let (z, _) = finder_inputs(sc, alpha)?;
    let section = robustness_section(&sc.matrix, &z, eta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let base = z.z();
    let mut effective = 0;
    for _ in 0..probes {
        let dir: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let radius = section.margin * (1.0 - 1e-6) * rng.gen_range(0.0..1.0);
        let zp = std::array::from_fn(|k| base[k] + dir[k] / norm.max(f64::MIN_POSITIVE) * radius);
        let perturbed = z.with_z(zp);
        if robustness_f(&perturbed, eta) > 0.0 && eta < perturbed.kappa {
            effective += 1;
        }
    }
    Ok(RobustnessReport {
        scenario_id: sc.id.clone(),
        inputs: z.into(),
        robustness: section,
        probes,
        probes_effective: effective,
    })
}

/// Exploration, completion and the zero-block hypothesis on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct McDemoReport {
    pub scenario_id: String,
    /// Items revealed per user.
    pub q: usize,
    pub observed_pairs: usize,
    pub hypothesis_holds: bool,
    pub true_rank: usize,
    pub reduced_true_rank: usize,
    pub completion_rank: Option<usize>,
    pub completion_majority_rank: Option<usize>,
    pub trials: usize,
    pub hold_rate: f64,
    /// `Π_u C(n − c_u, q) / C(n, q)` over minority users with `c_u`
    /// positive minority-block ratings.
    pub closed_form: f64,
    pub z_score: Option<f64>,
}

fn miss_probability(n: usize, c: usize, q: usize) -> f64 {
    // C(n - c, q) / C(n, q) = Π_{j<q} (n - c - j) / (n - j)
    (0..q)
        .map(|j| (n as f64 - c as f64 - j as f64).max(0.0) / (n - j) as f64)
        .product()
}

pub fn mc_demo(sc: &Scenario, q: usize, trials: usize) -> Result<McDemoReport> {
    let p = sc.partition()?;
    let r = &sc.matrix;
    let (m, n) = r.shape();
    ensure!(q <= n, "q = {q} exceeds {n} items");
    ensure!(trials > 0, "at least one trial is needed");
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let omega = explore_per_user(m, n, q, &mut rng)?;
    let holds = omega_satisfies_prop22(&omega, r, p);
    let completion = if holds {
        Some(sparsest_majority_completion(&PartialMatrix::from_observed(r, &omega)?, p, None)?)
    } else {
        None
    };
    let freq = prop22_hold_rate(r, p, q, trials, sc.seed)?;
    let closed_form: f64 = p
        .minority_users()
        .iter()
        .map(|&u| {
            let c = p.minority_items().iter().filter(|&&i| r.get(u, i) > 0.0).count();
            miss_probability(n, c, q)
        })
        .product();
    let se = freq.std_error(closed_form);
    Ok(McDemoReport {
        scenario_id: sc.id.clone(),
        q,
        observed_pairs: omega.len(),
        hypothesis_holds: holds,
        true_rank: rank(r)?,
        reduced_true_rank: rank(&reduce_solution(r, p)?)?,
        completion_rank: completion.as_ref().map(|c| c.rank),
        completion_majority_rank: completion.as_ref().map(|c| c.majority_rank),
        trials,
        hold_rate: freq.rate(),
        closed_form,
        z_score: (se > 0.0).then(|| (freq.rate() - closed_form) / se),
    })
}

/// Runs every exploration limit of every document for `replicates`
/// consecutive seeds in parallel. Rows are sorted by scenario id, seed and
/// limit; failures become rows with an error message.
pub fn sweep(specs: &[ScenarioSpec], seed: Option<u64>, replicates: usize) -> Result<SweepReport> {
    ensure!(replicates >= 1, "replicates must be at least 1");
    let mut jobs = Vec::new();
    for (s, spec) in specs.iter().enumerate() {
        let base = seed.unwrap_or(spec.seed);
        for rep in 0..replicates as u64 {
            let sc = materialize(spec, Some(base + rep))?;
            for (k, &alpha) in sc.alphas.iter().enumerate() {
                jobs.push((spec.id.clone(), base + rep, k, s, alpha));
            }
        }
    }
    let mut rows: Vec<((String, u64, usize), SweepRow)> = jobs
        .into_par_iter()
        .map(|(id, seed, k, s, alpha)| {
            let row = sweep_point(&specs[s], seed, alpha);
            ((id, seed, k), row)
        })
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(SweepReport {
        runs: rows.into_iter().map(|(_, r)| r).collect(),
    })
}

fn sweep_point(spec: &ScenarioSpec, seed: u64, alpha: f64) -> SweepRow {
    let mut row = SweepRow {
        scenario_id: spec.id.clone(),
        seed,
        alpha,
        reference_rank: 0,
        truthful_rank: 0,
        truthful_welfare: 0.0,
        eta: None,
        collective_rank: None,
        collective_welfare: None,
        error: None,
    };
    let outcome = materialize(spec, Some(seed)).and_then(|sc| run(&sc.at_alpha(alpha)));
    match outcome {
        Ok(rep) => {
            row.reference_rank = match (&rep.block, &rep.popularity) {
                (Some(b), _) => b.k_maj,
                (_, Some(p)) => p.n_bar,
                _ => 0,
            };
            row.truthful_rank = rep.truthful.rank;
            row.truthful_welfare = rep.truthful.social_welfare;
            row.eta = rep
                .collective
                .as_ref()
                .and_then(|c| c.eta)
                .or(rep.finder.as_ref().map(|f| f.eta));
            row.collective_rank = rep.collective.as_ref().map(|c| c.run.rank);
            row.collective_welfare = rep.collective.as_ref().map(|c| c.run.social_welfare);
        }
        Err(e) => row.error = Some(format!("{e:#}")),
    }
    row
}
