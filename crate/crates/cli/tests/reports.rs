//! Library-level checks of scenario runs and report encodings.

use std::path::PathBuf;

use colrec::io::{default_ids, read_ratings_csv, write_ratings_csv};
use colrec_cli::commands::{self, find_eta_raw};
use colrec_cli::config::{materialize, Scenario, ScenarioSpec, Structure};
use colrec_cli::report::{
    canonicalize, run_report_schema, to_canonical_json, write_run_csv, FinderInputsDoc, RunReport,
};
use serde_json::Value;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn load(name: &str) -> Scenario {
    materialize(&ScenarioSpec::load(&scenario_path(name)).unwrap(), None).unwrap()
}

fn spec(json: &str) -> ScenarioSpec {
    serde_json::from_str(json).unwrap()
}

#[test]
fn s1_auto_eta_end_to_end() {
    let report = commands::run(&load("s1-auto.json")).unwrap();
    let finder = report.finder.as_ref().unwrap();
    // Midpoint of the finder's bracket with √n̄ = 2, AV = 25, |U| = 100.
    let hand = ((4f64.sqrt() * 25.0 + 2664f64.sqrt()) / 200.0 + 1.0) / 2.0;
    assert!((finder.eta - hand).abs() < 1e-6, "eta {}", finder.eta);
    assert!((finder.eta - 0.754034).abs() < 1e-6);
    let c = report.collective.as_ref().unwrap();
    assert_eq!(c.sw_delta, 4.0);
    assert_eq!((report.truthful.rank, c.run.rank), (4, 5));
    assert!(c.verdicts.values().all(|v| *v), "{:?}", c.verdicts);
    assert!(finder.verdicts.values().all(|v| *v));
    assert!((c.robustness.as_ref().unwrap().margin - 0.3614).abs() < 1e-3);
    let tol = (405 * 6) as f64 * f64::EPSILON * (c.run.u_en + report.truthful.u_en);
    assert!((c.u_en_delta - finder.eta * 100.0).abs() <= tol);
    assert_eq!(c.ratio, Some(404.0 / 400.0));
    // Picky users switch to the target item, everyone else keeps theirs.
    let switched: Vec<&str> = report
        .per_user
        .iter()
        .filter(|u| u.collective_items != Some(u.truthful_items.clone()))
        .map(|u| u.user.as_str())
        .collect();
    assert_eq!(switched, ["u400", "u401", "u402", "u403"]);
}

#[test]
fn no_strategy_leaves_collective_fields_absent() {
    let report = commands::run(&load("d2.json")).unwrap();
    assert!(report.collective.is_none() && report.finder.is_none());
    assert!(report
        .per_user
        .iter()
        .all(|u| u.collective_items.is_none() && u.collective_welfare.is_none()));
    let json: Value = serde_json::from_str(&to_canonical_json(&report).unwrap()).unwrap();
    assert_eq!(json["collective"], Value::Null);
}

#[test]
fn d2_generator_matches_indicator_blocks() {
    let sc = load("d2.json");
    let mut expected = vec![vec![0.0; 4]; 10];
    for (u, row) in expected.iter_mut().enumerate() {
        let item = match u {
            0..=3 => 0,
            4..=7 => 1,
            8 => 2,
            _ => 3,
        };
        row[item] = 1.0;
    }
    let rows: Vec<Vec<f64>> = (0..10).map(|u| sc.matrix.row(u)).collect();
    assert_eq!(rows, expected);
    let report = commands::run(&sc).unwrap();
    let gap = report.block.unwrap().gap_interval.unwrap();
    assert!((gap.lo - 1.0).abs() < 1e-12 && (gap.hi - 2.0).abs() < 1e-12);
    assert_eq!(report.alpha, 1.5);
}

#[test]
fn infeasible_and_malformed_specs_rejected() {
    let bad_gap = spec(r#"{"id":"x","seed":0,"matrix":{"family":"d2","m_maj":2,"m_minor":2}}"#);
    assert!(materialize(&bad_gap, None).is_err());
    let column_on_block = spec(
        r#"{"id":"x","seed":0,"matrix":{"family":"s1"},"strategy":{"kind":"column","values":[0.0]}}"#,
    );
    assert!(materialize(&column_on_block, None).is_err());
    let unknown: Result<ScenarioSpec, _> =
        serde_json::from_str(r#"{"id":"x","seed":0,"matrix":{"family":"s1"},"extra":1}"#);
    assert!(unknown.is_err());
    let sweep_in_run = load("s1-sweep.json");
    assert!(commands::run(&sweep_in_run).is_err());
}

#[test]
fn alpha_sweep_keeps_majority_rank() {
    let spec = ScenarioSpec::load(&scenario_path("s1-sweep.json")).unwrap();
    let report = commands::sweep(&[spec], None, 1).unwrap();
    assert_eq!(report.runs.len(), 15);
    for row in &report.runs {
        assert_eq!(row.error, None);
        assert_eq!(row.truthful_rank, 4, "alpha {}", row.alpha);
        assert_eq!(row.reference_rank, 4);
    }
    let alphas: Vec<f64> = report.runs.iter().map(|r| r.alpha).collect();
    assert_eq!(alphas.first(), Some(&2.5));
    assert_eq!(alphas.last(), Some(&9.5));
}

#[test]
fn sweep_order_is_independent_of_thread_count() {
    let specs = vec![
        ScenarioSpec::load(&scenario_path("random-block.json")).unwrap(),
        ScenarioSpec::load(&scenario_path("s1-sweep.json")).unwrap(),
    ];
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| commands::sweep(&specs, None, 3).unwrap());
    let b = four.install(|| commands::sweep(&specs, None, 3).unwrap());
    assert_eq!(to_canonical_json(&a).unwrap(), to_canonical_json(&b).unwrap());
    let keys: Vec<(String, u64)> = a.runs.iter().map(|r| (r.scenario_id.clone(), r.seed)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

fn sample_reports() -> Vec<RunReport> {
    ["s1-auto.json", "d2.json", "popgap.json", "random-block.json", "csv-fixed-eta.json"]
        .iter()
        .map(|n| commands::run(&load(n)).unwrap())
        .collect()
}

#[test]
fn emit_then_parse_round_trips() {
    for report in sample_reports() {
        let canonical = canonicalize(&report).unwrap();
        let text = to_canonical_json(&report).unwrap();
        let parsed: RunReport = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, canonical, "{}", report.scenario_id);
        assert_eq!(to_canonical_json(&parsed).unwrap(), text);
    }
}

#[test]
fn identical_inputs_give_identical_bytes() {
    for name in ["s1-auto.json", "popgap.json", "random-block.json"] {
        let a = to_canonical_json(&commands::run(&load(name)).unwrap()).unwrap();
        let b = to_canonical_json(&commands::run(&load(name)).unwrap()).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn csv_report_has_one_row_per_user() {
    for report in sample_reports() {
        let mut buf = Vec::new();
        write_run_csv(&mut buf, &report).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        assert_eq!(
            rdr.headers().unwrap().iter().collect::<Vec<_>>(),
            [
                "user",
                "class",
                "truthful_item",
                "truthful_welfare",
                "collective_item",
                "collective_welfare"
            ]
        );
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), report.users);
        for (row, user) in rows.iter().zip(&report.per_user) {
            assert_eq!(&row[0], user.user);
            assert_eq!(row[2].split(';').count(), report.top_k);
            assert_eq!(row[4].is_empty(), report.collective.is_none());
        }
    }
}

#[test]
fn reports_validate_against_shipped_schema() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json");
    let shipped = std::fs::read_to_string(path).unwrap();
    assert_eq!(shipped, run_report_schema().unwrap(), "shipped schema is stale");
    let schema: Value = serde_json::from_str(&shipped).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    for report in sample_reports() {
        let instance: Value = serde_json::from_str(&to_canonical_json(&report).unwrap()).unwrap();
        let errors: Vec<String> = validator.iter_errors(&instance).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{}: {errors:?}", report.scenario_id);
    }
    let mut broken: Value = serde_json::from_str(&to_canonical_json(&sample_reports()[0]).unwrap()).unwrap();
    broken["truthful"]["rank"] = Value::String("four".into());
    assert!(!validator.is_valid(&broken));
    broken["truthful"]["rank"] = Value::from(4);
    broken["unexpected"] = Value::Bool(true);
    assert!(!validator.is_valid(&broken));
}

#[test]
fn ratings_csv_round_trips_through_a_scenario() {
    let sc = load("random-block.json");
    let mut buf = Vec::new();
    write_ratings_csv(&mut buf, &sc.matrix, &sc.users, &sc.items).unwrap();
    let back = read_ratings_csv(buf.as_slice()).unwrap();
    assert_eq!(back.to_matrix().unwrap(), sc.matrix);
    assert_eq!(back.users, default_ids("u", sc.matrix.rows()));
    let csv_scenario = load("csv-fixed-eta.json");
    assert_eq!(csv_scenario.matrix, load("s1-auto.json").matrix);
}

#[test]
fn popgap_run_reports_class_and_general_conditions() {
    let report = commands::run(&load("popgap.json")).unwrap();
    let pop = report.popularity.as_ref().unwrap();
    assert!(pop.verdicts.values().all(|v| *v), "{:?}", pop.verdicts);
    assert!(pop.projection_gap <= pop.projection_bound.unwrap());
    let c = report.collective.as_ref().unwrap();
    assert!(c.verdicts["sufficient"]);
    assert!(c.ratio.unwrap() > 1.0);
    let sc = load("popgap.json");
    assert!(matches!(sc.structure, Structure::Popularity { .. }));
}

#[test]
fn finder_on_raw_inputs() {
    let z = FinderInputsDoc {
        sigma_kmaj: 10.0,
        alpha: 2.1,
        n_bar: 4.0,
        picky_col_sq: 4.0,
        av: 25.0,
        kappa: 1.0,
        coll_size: 100.0,
    };
    let f = find_eta_raw(z).unwrap();
    assert!((f.eta - 0.754034879).abs() < 1e-6);
    assert!(f.verdicts["sufficient"]);
    let blocked = find_eta_raw(FinderInputsDoc { alpha: 8.0, ..z }).unwrap();
    assert_eq!(blocked.eta, 0.0);
}

#[test]
fn robustness_probes_stay_effective() {
    let r = commands::robustness(&load("s1-auto.json"), 200).unwrap();
    assert_eq!(r.probes_effective, 200);
    assert!((r.robustness.margin - 0.3614).abs() < 1e-3);
}

#[test]
fn mc_demo_matches_closed_form() {
    let r = commands::mc_demo(&load("d2.json"), 2, 40_000).unwrap();
    assert_eq!(r.closed_form, 0.25);
    assert!(r.z_score.unwrap().abs() <= 4.0, "z = {:?}", r.z_score);
    assert_eq!(r.reduced_true_rank, 2);
    assert_eq!(r.true_rank, 4);
    let everything = commands::mc_demo(&load("d2.json"), 4, 10).unwrap();
    assert!(!everything.hypothesis_holds && everything.hold_rate == 0.0);
    let nothing = commands::mc_demo(&load("d2.json"), 0, 10).unwrap();
    assert!(nothing.hypothesis_holds);
    assert_eq!(nothing.completion_rank, Some(0));
}

#[test]
fn scenario_documents_keep_full_precision() {
    use colrec_cli::report::to_sorted_json;
    let sc = load("popgap.json");
    let text = to_sorted_json(&sc.to_spec()).unwrap();
    let back = materialize(&serde_json::from_str(&text).unwrap(), None).unwrap();
    assert_eq!(back.matrix, sc.matrix);
    assert_eq!(back.alphas, sc.alphas);
    assert_eq!(back.strategy, sc.strategy);
}
