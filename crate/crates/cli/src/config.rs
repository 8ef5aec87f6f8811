//! Scenario documents and their materialization.
//!
//! A document names a matrix source, an optional structure (block partition
//! or popular prefix), an exploration limit or sweep, an optional strategy,
//! the top-k setting and a mandatory seed. [`materialize`] resolves it to a
//! concrete matrix, structure, limit list and strategy, and runs the
//! family's structural validator.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use colrec::io::{default_ids, read_ratings_csv};
use colrec::learner::top_items;
use colrec::matrix::{find_picky_items, singular_value_gap};
use colrec::popgap::{self, PopularitySplit};
use colrec::{scenarios, GroupPartition, RatingsMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Scenario document as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub id: String,
    pub seed: u64,
    pub matrix: MatrixSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<AlphaSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategySpec>,
    #[serde(default = "one")]
    pub top_k: usize,
}

fn one() -> usize {
    1
}

/// Where the true ratings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MatrixSource {
    /// Indicator blocks with two popular and two niche items.
    D2 { m_maj: usize, m_minor: usize },
    /// Four popular groups, a picky item and a niche item.
    S1,
    /// Random majority-minority matrix with a singular value gap.
    RandomBlock,
    /// Popularity-gap instance with a generated collective column.
    Popgap,
    /// Ratings CSV; relative paths resolve against the document's folder.
    Csv { path: PathBuf },
    /// Dense rows with default identifiers.
    Inline { rows: Vec<Vec<f64>> },
}

impl MatrixSource {
    pub fn family(&self) -> &'static str {
        match self {
            Self::D2 { .. } => "d2",
            Self::S1 => "s1",
            Self::RandomBlock => "random-block",
            Self::Popgap => "popgap",
            Self::Csv { .. } => "csv",
            Self::Inline { .. } => "inline",
        }
    }
}

/// User and item structure; generators supply their own when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StructureSpec {
    /// Leading `m_bar` users and `n_bar` items form the majority block.
    Leading { m_bar: usize, n_bar: usize },
    /// Explicit majority sets; minorities are the complements.
    Explicit {
        majority_users: Vec<usize>,
        majority_items: Vec<usize>,
    },
    /// The first `n_bar` items are the popular ones.
    PopularPrefix { n_bar: usize },
}

/// A single exploration limit or an evenly spaced sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Value(f64),
    Sweep(AlphaSweep),
}

/// Points `from + j·step`. The interval is open unless `closed` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSweep {
    pub from: f64,
    pub to: f64,
    pub step: f64,
    #[serde(default)]
    pub closed: bool,
}

impl AlphaSweep {
    pub fn points(&self) -> Result<Vec<f64>> {
        ensure!(
            self.step > 0.0 && self.from.is_finite() && self.to.is_finite() && self.from <= self.to,
            "alpha sweep needs finite from <= to and a positive step"
        );
        let tol = 1e-9 * self.step;
        let count = ((self.to - self.from) / self.step + tol).floor() as usize;
        let points: Vec<f64> = (0..=count)
            .map(|j| self.from + j as f64 * self.step)
            .filter(|&a| {
                self.closed || (a > self.from + tol && a < self.to - tol)
            })
            .collect();
        ensure!(!points.is_empty(), "alpha sweep is empty");
        Ok(points)
    }
}

/// Collective strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategySpec {
    /// Collective members report `eta` for a minority item.
    Uprate {
        /// Defaults to the first picky item.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_item: Option<usize>,
        collective: CollectiveSelector,
        eta: EtaSpec,
    },
    /// Replacement for column `n_bar` of a popular-prefix matrix.
    Column { values: Vec<f64> },
    /// The column produced by the popularity-gap generator.
    Generated,
}

/// Collective members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CollectiveSelector {
    /// Fraction of each popular-item group of majority users.
    Fraction { fraction: f64 },
    Users { users: Vec<usize> },
}

/// Fixed uprating value or the finder's output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSpec {
    Value(f64),
    Keyword(EtaKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EtaKeyword {
    #[serde(rename = "auto")]
    Auto,
}

impl EtaSpec {
    pub const AUTO: Self = Self::Keyword(EtaKeyword::Auto);
}

impl ScenarioSpec {
    /// Reads a document; relative CSV paths are made absolute against the
    /// document's folder.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading scenario {}", path.display()))?;
        let mut spec: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing scenario {}", path.display()))?;
        if let MatrixSource::Csv { path: csv } = &mut spec.matrix {
            if csv.is_relative() {
                *csv = path.parent().unwrap_or(Path::new(".")).join(&*csv);
            }
        }
        Ok(spec)
    }
}

/// Resolved structure.
#[derive(Debug, Clone, PartialEq)]
pub enum Structure {
    Block(GroupPartition),
    Popularity { n_bar: usize },
}

/// Resolved strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Uprate {
        target_item: usize,
        collective: Vec<usize>,
        eta: EtaSpec,
    },
    Column(Vec<f64>),
}

/// A document resolved to concrete inputs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    pub family: &'static str,
    pub matrix: RatingsMatrix,
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub structure: Structure,
    pub alphas: Vec<f64>,
    pub strategy: Option<Strategy>,
    pub top_k: usize,
}

impl Scenario {
    /// The single exploration limit; errors on sweeps.
    pub fn alpha(&self) -> Result<f64> {
        match self.alphas.as_slice() {
            [a] => Ok(*a),
            _ => bail!("scenario {} sweeps alpha; use the sweep command", self.id),
        }
    }

    pub fn partition(&self) -> Result<&GroupPartition> {
        match &self.structure {
            Structure::Block(p) => Ok(p),
            Structure::Popularity { .. } => {
                bail!("scenario {} has no majority-minority partition", self.id)
            }
        }
    }

    /// Copy with one exploration limit.
    pub fn at_alpha(&self, alpha: f64) -> Self {
        Self {
            alphas: vec![alpha],
            ..self.clone()
        }
    }

    /// Self-contained document with the matrix inlined.
    pub fn to_spec(&self) -> ScenarioSpec {
        let structure = match &self.structure {
            Structure::Block(p) => StructureSpec::Explicit {
                majority_users: p.majority_users().to_vec(),
                majority_items: p.majority_items().to_vec(),
            },
            Structure::Popularity { n_bar } => StructureSpec::PopularPrefix { n_bar: *n_bar },
        };
        let strategy = self.strategy.as_ref().map(|s| match s {
            Strategy::Uprate { target_item, collective, eta } => StrategySpec::Uprate {
                target_item: Some(*target_item),
                collective: CollectiveSelector::Users { users: collective.clone() },
                eta: *eta,
            },
            Strategy::Column(values) => StrategySpec::Column { values: values.clone() },
        });
        ScenarioSpec {
            id: self.id.clone(),
            seed: self.seed,
            matrix: MatrixSource::Inline {
                rows: (0..self.matrix.rows()).map(|u| self.matrix.row(u)).collect(),
            },
            structure: Some(structure),
            alpha: Some(match self.alphas.as_slice() {
                [a] => AlphaSpec::Value(*a),
                _ => unreachable!("generated scenarios carry one limit"),
            }),
            strategy,
            top_k: self.top_k,
        }
    }
}

/// What a generator contributes beyond the matrix.
#[derive(Default)]
struct Defaults {
    structure: Option<Structure>,
    alpha: Option<f64>,
    target_item: Option<usize>,
    column: Option<Vec<f64>>,
}

/// Resolves a document. `seed` overrides the document's seed.
pub fn materialize(spec: &ScenarioSpec, seed: Option<u64>) -> Result<Scenario> {
    let seed = seed.unwrap_or(spec.seed);
    ensure!(spec.top_k >= 1, "top_k must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut defaults = Defaults::default();
    let (matrix, users, items) = match &spec.matrix {
        MatrixSource::D2 { m_maj, m_minor } => {
            ensure!(*m_minor >= 1, "d2 needs at least one minority user per niche item");
            ensure!(
                m_maj > m_minor,
                "infeasible d2 request: the gap (√{m_minor}, √{m_maj}) is empty"
            );
            let sc = scenarios::d2(*m_maj, *m_minor);
            defaults.structure = Some(Structure::Block(sc.partition));
            labeled(sc.matrix)
        }
        MatrixSource::S1 => {
            let sc = scenarios::s1();
            defaults.structure = Some(Structure::Block(sc.partition));
            defaults.alpha = Some(sc.alpha);
            defaults.target_item = Some(sc.target_item);
            labeled(sc.matrix)
        }
        MatrixSource::RandomBlock => {
            let sc = scenarios::random_block(&mut rng);
            defaults.structure = Some(Structure::Block(sc.partition));
            labeled(sc.matrix)
        }
        MatrixSource::Popgap => {
            let inst = scenarios::popularity_gap_instance(&mut rng)?;
            defaults.structure = Some(Structure::Popularity { n_bar: inst.n_bar });
            defaults.alpha = Some(inst.alpha);
            defaults.column = Some(inst.r_tilde);
            labeled(inst.matrix)
        }
        MatrixSource::Csv { path } => {
            let file = std::fs::File::open(path)
                .with_context(|| format!("opening ratings {}", path.display()))?;
            let lr = read_ratings_csv(file)
                .with_context(|| format!("reading ratings {}", path.display()))?;
            (lr.to_matrix()?, lr.users, lr.items)
        }
        MatrixSource::Inline { rows } => labeled(RatingsMatrix::from_rows(rows)?),
    };
    let (m, n) = matrix.shape();
    let structure = match &spec.structure {
        Some(StructureSpec::Leading { m_bar, n_bar }) => {
            Structure::Block(GroupPartition::leading(m, n, *m_bar, *n_bar)?)
        }
        Some(StructureSpec::Explicit { majority_users, majority_items }) => Structure::Block(
            GroupPartition::from_majority(m, n, majority_users.clone(), majority_items.clone())?,
        ),
        Some(StructureSpec::PopularPrefix { n_bar }) => Structure::Popularity { n_bar: *n_bar },
        None => defaults
            .structure
            .take()
            .context("a structure is required for this matrix source")?,
    };
    validate_structure(&matrix, &structure)?;

    let alphas = match &spec.alpha {
        Some(AlphaSpec::Value(a)) => vec![*a],
        Some(AlphaSpec::Sweep(s)) => s.points()?,
        None => vec![match defaults.alpha {
            Some(a) => a,
            None => default_alpha(&matrix, &structure)?,
        }],
    };
    ensure!(
        alphas.iter().all(|a| a.is_finite() && *a >= 0.0),
        "exploration limits must be finite and nonnegative"
    );

    let strategy = match &spec.strategy {
        None => None,
        Some(StrategySpec::Uprate { target_item, collective, eta }) => {
            let Structure::Block(p) = &structure else {
                bail!("uprating needs a majority-minority partition");
            };
            let target_item = match target_item.or(defaults.target_item) {
                Some(i) => i,
                None => find_picky_items(&matrix, p)?
                    .first()
                    .map(|pi| pi.item)
                    .context("no picky item to target; set target_item")?,
            };
            let collective = match collective {
                CollectiveSelector::Users { users } => users.clone(),
                CollectiveSelector::Fraction { fraction } => {
                    stratified_collective(&matrix, p, *fraction)?
                }
            };
            if let EtaSpec::Value(v) = eta {
                ensure!(*v > 0.0 && v.is_finite(), "eta must be positive, got {v}");
            }
            Some(Strategy::Uprate { target_item, collective, eta: *eta })
        }
        Some(StrategySpec::Column { values }) => Some(Strategy::Column(values.clone())),
        Some(StrategySpec::Generated) => Some(Strategy::Column(
            defaults
                .column
                .take()
                .context("this matrix source does not generate a collective column")?,
        )),
    };
    if let Some(Strategy::Column(values)) = &strategy {
        ensure!(
            matches!(structure, Structure::Popularity { .. }),
            "a collective column needs a popular-prefix structure"
        );
        ensure!(values.len() == m, "collective column has {} entries for {m} users", values.len());
    }
    Ok(Scenario {
        id: spec.id.clone(),
        seed,
        family: spec.matrix.family(),
        matrix,
        users,
        items,
        structure,
        alphas,
        strategy,
        top_k: spec.top_k,
    })
}

fn labeled(matrix: RatingsMatrix) -> (RatingsMatrix, Vec<String>, Vec<String>) {
    let (m, n) = matrix.shape();
    (matrix, default_ids("u", m), default_ids("i", n))
}

/// Block partitions must be valid for the matrix; popular prefixes must
/// place the matrix in the popularity-gap class.
fn validate_structure(r: &RatingsMatrix, s: &Structure) -> Result<()> {
    match s {
        Structure::Block(p) => p.validate_for(r).context("partition does not fit the matrix")?,
        Structure::Popularity { n_bar } => {
            let split = PopularitySplit::new(r, *n_bar)?;
            let report = popgap::class_membership(&split)?;
            ensure!(
                report.in_class,
                "matrix is outside the popularity-gap class: {}",
                report.reason.unwrap_or_default()
            );
        }
    }
    Ok(())
}

/// Midpoint of the structure's gap interval.
fn default_alpha(r: &RatingsMatrix, s: &Structure) -> Result<f64> {
    let gap = match s {
        Structure::Block(p) => singular_value_gap(r, p)?,
        Structure::Popularity { n_bar } => popgap::gap_interval(&PopularitySplit::new(r, *n_bar)?)?,
    };
    Ok(gap
        .context("the gap interval is empty; give alpha explicitly")?
        .midpoint())
}

/// Majority users grouped by their favourite majority item (lowest index on
/// ties); the first `round(fraction · |group|)` users of every group in
/// index order.
pub fn stratified_collective(r: &RatingsMatrix, p: &GroupPartition, fraction: f64) -> Result<Vec<usize>> {
    ensure!(
        fraction > 0.0 && fraction <= 1.0,
        "collective fraction must lie in (0, 1], got {fraction}"
    );
    let items = p.majority_items();
    let mut groups = vec![Vec::new(); items.len()];
    for &u in p.majority_users() {
        let row: Vec<f64> = items.iter().map(|&i| r.get(u, i)).collect();
        groups[top_items(&row)[0]].push(u);
    }
    let mut chosen: Vec<usize> = groups
        .iter()
        .flat_map(|g| g.iter().take((fraction * g.len() as f64).round() as usize).copied())
        .collect();
    chosen.sort_unstable();
    ensure!(!chosen.is_empty(), "collective fraction {fraction} selects nobody");
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s1_spec() -> ScenarioSpec {
        serde_json::from_str(
            r#"{"id":"s1","seed":1,"matrix":{"family":"s1"},
                "strategy":{"kind":"uprate","collective":{"fraction":0.25},"eta":"auto"}}"#,
        )
        .unwrap()
    }

    #[test]
    fn s1_document_resolves_to_generator_defaults() {
        let sc = materialize(&s1_spec(), None).unwrap();
        let s1 = scenarios::s1();
        assert_eq!(sc.alphas, vec![2.1]);
        assert_eq!(
            sc.strategy,
            Some(Strategy::Uprate {
                target_item: 4,
                collective: s1.collective,
                eta: EtaSpec::AUTO
            })
        );
    }

    #[test]
    fn sweep_points_are_open_by_default() {
        let s = AlphaSweep { from: 2.0, to: 10.0, step: 0.5, closed: false };
        let pts = s.points().unwrap();
        assert_eq!(pts.len(), 15);
        assert_eq!((pts[0], pts[14]), (2.5, 9.5));
        let closed = AlphaSweep { closed: true, ..s };
        assert_eq!(closed.points().unwrap().len(), 17);
    }

    #[test]
    fn infeasible_d2_rejected() {
        let spec: ScenarioSpec =
            serde_json::from_str(r#"{"id":"x","seed":0,"matrix":{"family":"d2","m_maj":1,"m_minor":2}}"#)
                .unwrap();
        assert!(materialize(&spec, None).is_err());
    }

    #[test]
    fn missing_seed_rejected() {
        let r: std::result::Result<ScenarioSpec, _> =
            serde_json::from_str(r#"{"id":"x","matrix":{"family":"s1"}}"#);
        assert!(r.is_err());
    }

    #[test]
    fn inlined_document_reproduces_scenario() {
        let sc = materialize(&s1_spec(), None).unwrap();
        let again = materialize(&sc.to_spec(), None).unwrap();
        assert_eq!(again.matrix, sc.matrix);
        assert_eq!(again.structure, sc.structure);
        assert_eq!(again.strategy, sc.strategy);
    }
}
