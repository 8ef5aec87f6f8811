//! Report types and their canonical JSON and CSV encodings.
//!
//! Every float is rounded to 12 significant digits and object keys are
//! written in sorted order, so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::io::Write;

use anyhow::Result;
use schemars::JsonSchema;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Open interval `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl From<colrec::Interval> for Range {
    fn from(iv: colrec::Interval) -> Self {
        Self { lo: iv.lo, hi: iv.hi }
    }
}

/// Outcome of one learner run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunSide {
    /// Chosen truncation rank.
    pub rank: usize,
    /// Retained share of singular-value mass at the chosen rank.
    pub tvr: f64,
    pub social_welfare: f64,
    pub u_ben: f64,
    /// Engagement utility of the matrix the learner saw.
    pub u_en: f64,
    /// Users with an all-negative estimated row.
    pub negative_rows: Vec<usize>,
}

/// Majority-minority structure of the true matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BlockSection {
    pub majority_users: usize,
    pub majority_items: usize,
    pub majority_spectrum: Vec<f64>,
    pub minority_spectrum: Vec<f64>,
    pub k_maj: usize,
    pub gap_interval: Option<Range>,
    pub alpha_in_gap: bool,
    pub picky_items: Vec<usize>,
}

/// Popularity-gap structure of the true matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PopularitySection {
    pub n_bar: usize,
    pub kappa: f64,
    pub kappa_lower: f64,
    pub sigma_nbar_popular: f64,
    pub ratings_gap: Option<f64>,
    pub gap_interval: Option<Range>,
    pub alpha_in_gap: bool,
    pub sigma_nbar: f64,
    pub sigma_nbar_next: f64,
    pub singular_lower_bound: f64,
    pub singular_upper_bound: f64,
    pub projection_gap: f64,
    pub projection_bound: Option<f64>,
    pub switch_users: Vec<usize>,
    /// `None` when its premise fails.
    pub no_larger_prefix: Option<bool>,
    pub verdicts: BTreeMap<String, bool>,
}

/// Finder parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FinderInputsDoc {
    pub sigma_kmaj: f64,
    pub alpha: f64,
    pub n_bar: f64,
    pub picky_col_sq: f64,
    pub av: f64,
    pub kappa: f64,
    pub coll_size: f64,
}

impl From<colrec::collective::FinderInputs> for FinderInputsDoc {
    fn from(z: colrec::collective::FinderInputs) -> Self {
        Self {
            sigma_kmaj: z.sigma_kmaj,
            alpha: z.alpha,
            n_bar: z.n_bar,
            picky_col_sq: z.picky_col_sq,
            av: z.av,
            kappa: z.kappa,
            coll_size: z.coll_size,
        }
    }
}

impl From<FinderInputsDoc> for colrec::collective::FinderInputs {
    fn from(z: FinderInputsDoc) -> Self {
        Self {
            sigma_kmaj: z.sigma_kmaj,
            alpha: z.alpha,
            n_bar: z.n_bar,
            picky_col_sq: z.picky_col_sq,
            av: z.av,
            kappa: z.kappa,
            coll_size: z.coll_size,
        }
    }
}

/// Finder call and the sufficient conditions at its output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FinderSection {
    pub inputs: FinderInputsDoc,
    /// Zero when no effective value exists.
    pub eta: f64,
    pub sigma1_min: Option<f64>,
    pub verdicts: BTreeMap<String, bool>,
    /// Slack of the gap condition at `eta`.
    pub slack: f64,
}

/// Robustness margin of an uprating value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSection {
    pub eta: f64,
    pub f: f64,
    pub l: f64,
    pub l1_norm: f64,
    pub l2_norm: f64,
    pub margin: f64,
}

/// Collective run compared with the truthful one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CollectiveSection {
    /// `uprate` or `column`.
    pub kind: String,
    pub target_item: usize,
    pub eta: Option<f64>,
    pub collective_size: usize,
    pub spectrum: Vec<f64>,
    pub run: RunSide,
    pub sw_delta: f64,
    pub u_en_delta: f64,
    /// Collective over truthful welfare; absent when truthful welfare is 0.
    pub ratio: Option<f64>,
    pub sufficient_gap: Option<Range>,
    pub sigma_hat: Option<f64>,
    pub verdicts: BTreeMap<String, bool>,
    pub robustness: Option<RobustnessSection>,
    pub changed_users: usize,
}

/// Per-user outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct UserRow {
    pub user: String,
    pub class: String,
    pub truthful_items: Vec<String>,
    pub truthful_welfare: f64,
    pub collective_items: Option<Vec<String>>,
    pub collective_welfare: Option<f64>,
}

/// Full record of one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub scenario_id: String,
    pub family: String,
    pub seed: u64,
    pub users: usize,
    pub items: usize,
    pub alpha: f64,
    pub top_k: usize,
    pub spectrum: Vec<f64>,
    pub block: Option<BlockSection>,
    pub popularity: Option<PopularitySection>,
    pub truthful: RunSide,
    pub finder: Option<FinderSection>,
    pub collective: Option<CollectiveSection>,
    pub per_user: Vec<UserRow>,
}

/// One point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub scenario_id: String,
    pub seed: u64,
    pub alpha: f64,
    /// `k_maj` for block structures, `n_bar` for popular prefixes.
    pub reference_rank: usize,
    pub truthful_rank: usize,
    pub truthful_welfare: f64,
    pub eta: Option<f64>,
    pub collective_rank: Option<usize>,
    pub collective_welfare: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SweepReport {
    pub runs: Vec<SweepRow>,
}

/// Rounds to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

/// Rounds every float and sorts every object's keys.
pub fn canonical_value(v: Value) -> Value {
    sorted_value(v, true)
}

fn sorted_value(v: Value, round: bool) -> Value {
    match v {
        Value::Number(n) if round && n.is_f64() => {
            let x = round12(n.as_f64().expect("f64 number"));
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(|v| sorted_value(v, round)).collect()),
        Value::Object(o) => {
            let mut entries: Vec<(String, Value)> = o.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(
                entries
                    .into_iter()
                    .map(|(k, v)| (k, sorted_value(v, round)))
                    .collect::<Map<_, _>>(),
            )
        }
        other => other,
    }
}

/// The value a report takes after a canonical emit and parse.
pub fn canonicalize<T: Serialize + DeserializeOwned>(report: &T) -> Result<T> {
    Ok(serde_json::from_value(canonical_value(serde_json::to_value(report)?))?)
}

/// Canonical pretty JSON with a trailing newline.
pub fn to_canonical_json<T: Serialize>(report: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&canonical_value(serde_json::to_value(report)?))?;
    s.push('\n');
    Ok(s)
}

/// Pretty JSON with sorted keys and full float precision, for documents
/// that must reproduce their inputs exactly.
pub fn to_sorted_json<T: Serialize>(doc: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&sorted_value(serde_json::to_value(doc)?, false))?;
    s.push('\n');
    Ok(s)
}

/// Float as it appears in CSV output.
pub fn fmt_float(x: f64) -> String {
    serde_json::Number::from_f64(round12(x)).map_or_else(|| x.to_string(), |n| n.to_string())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

/// Per-user CSV with columns
/// `user,class,truthful_item,truthful_welfare,collective_item,collective_welfare`.
/// Top-k sets are joined with `;`; collective fields are empty without a
/// strategy.
pub fn write_run_csv<W: Write>(w: W, r: &RunReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "user",
        "class",
        "truthful_item",
        "truthful_welfare",
        "collective_item",
        "collective_welfare",
    ])?;
    for row in &r.per_user {
        out.write_record([
            row.user.clone(),
            row.class.clone(),
            row.truthful_items.join(";"),
            fmt_float(row.truthful_welfare),
            row.collective_items.as_ref().map(|v| v.join(";")).unwrap_or_default(),
            fmt_opt(row.collective_welfare),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(w: W, r: &SweepReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "scenario_id",
        "seed",
        "alpha",
        "reference_rank",
        "truthful_rank",
        "truthful_welfare",
        "eta",
        "collective_rank",
        "collective_welfare",
        "error",
    ])?;
    for row in &r.runs {
        out.write_record([
            row.scenario_id.clone(),
            row.seed.to_string(),
            fmt_float(row.alpha),
            row.reference_rank.to_string(),
            row.truthful_rank.to_string(),
            fmt_float(row.truthful_welfare),
            fmt_opt(row.eta),
            row.collective_rank.map(|k| k.to_string()).unwrap_or_default(),
            fmt_opt(row.collective_welfare),
            row.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Two-column `key,value` CSV of a flat JSON object; nested values are
/// flattened with `.` separators.
pub fn write_flat_csv<W: Write, T: Serialize>(w: W, report: &T) -> Result<()> {
    fn walk(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
        match v {
            Value::Object(o) => {
                for (k, v) in o {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, rows);
                }
            }
            Value::Array(a) => {
                for (i, v) in a.iter().enumerate() {
                    walk(&format!("{prefix}.{i}"), v, rows);
                }
            }
            Value::Null => rows.push((prefix.to_string(), String::new())),
            Value::String(s) => rows.push((prefix.to_string(), s.clone())),
            other => rows.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut rows = Vec::new();
    walk("", &canonical_value(serde_json::to_value(report)?), &mut rows);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["key", "value"])?;
    for (k, v) in rows {
        out.write_record([k, v])?;
    }
    out.flush()?;
    Ok(())
}

/// Schema of [`RunReport`] as shipped in the repository.
pub fn run_report_schema() -> Result<String> {
    let mut s = serde_json::to_string_pretty(&schemars::schema_for!(RunReport))?;
    s.push('\n');
    Ok(s)
}
