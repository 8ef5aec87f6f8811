//! `colrec` command-line entry point.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use colrec::io::write_ratings_csv;
use colrec_cli::commands;
use colrec_cli::config::{materialize, MatrixSource, Scenario, ScenarioSpec};
use colrec_cli::report::{
    run_report_schema, to_canonical_json, to_sorted_json, write_flat_csv, write_run_csv, write_sweep_csv,
    FinderInputsDoc,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "colrec", version, about = "Collective uprating against a truncated-SVD recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed; overrides the scenario document's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, or `-` for standard output.
    #[arg(long, global = true, env = "COLREC_OUT_DIR", default_value = "colrec-out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    D2,
    S1,
    RandomBlock,
    Popgap,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize a scenario: a self-contained document (json) or its
    /// ratings (csv).
    Generate {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        family: Option<Family>,
        #[arg(long, default_value_t = 4)]
        m_maj: usize,
        #[arg(long, default_value_t = 1)]
        m_minor: usize,
        /// Scenario id; defaults to the family name.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Truthful and collective runs of one scenario.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Effective uprating value from a scenario or from explicit parameters.
    FindEta {
        #[arg(long, conflicts_with = "sigma_kmaj")]
        config: Option<PathBuf>,
        #[command(flatten)]
        inputs: RawInputs,
        #[command(flatten)]
        common: Common,
    },
    /// Structural validators and strategy conditions without simulation.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Robustness margin of the scenario's uprating value.
    Robustness {
        #[arg(long)]
        config: PathBuf,
        /// Random parameter perturbations drawn inside the margin.
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Per-user exploration, zero-padded completion and Monte Carlo rate of
    /// the zero-block hypothesis.
    McDemo {
        #[arg(long)]
        config: PathBuf,
        /// Items revealed per user.
        #[arg(long, default_value_t = 1)]
        q: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Parallel runs over exploration limits, documents and seeds.
    Sweep {
        #[arg(long, required = true, num_args = 1..)]
        config: Vec<PathBuf>,
        /// Consecutive seeds per document, starting at its seed.
        #[arg(long, default_value_t = 1)]
        replicates: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Writes the run report JSON schema.
    Schema {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct RawInputs {
    #[arg(long, requires_all = ["alpha", "n_bar", "picky_col_sq", "av", "kappa", "coll_size"])]
    sigma_kmaj: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n_bar: Option<f64>,
    #[arg(long)]
    picky_col_sq: Option<f64>,
    #[arg(long)]
    av: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    coll_size: Option<f64>,
}

fn main() {
    if let Err(e) = real_main() {
        let broken_pipe = e.chain().any(|c| {
            c.downcast_ref::<std::io::Error>()
                .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
        });
        if broken_pipe {
            return;
        }
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { family, m_maj, m_minor, id, config, common } => {
            let spec = match (config, family) {
                (Some(path), _) => ScenarioSpec::load(&path)?,
                (None, Some(family)) => {
                    let seed = common.seed.context("--seed is required with --family")?;
                    let matrix = match family {
                        Family::D2 => MatrixSource::D2 { m_maj, m_minor },
                        Family::S1 => MatrixSource::S1,
                        Family::RandomBlock => MatrixSource::RandomBlock,
                        Family::Popgap => MatrixSource::Popgap,
                    };
                    ScenarioSpec {
                        id: id.unwrap_or_else(|| matrix.family().to_string()),
                        seed,
                        matrix,
                        structure: None,
                        alpha: None,
                        strategy: None,
                        top_k: 1,
                    }
                }
                (None, None) => unreachable!("clap requires one of them"),
            };
            let sc = materialize(&spec, common.seed)?;
            match common.format {
                Format::Json => {
                    let text = to_sorted_json(&sc.to_spec())?;
                    emit(&common, "scenario.json", |w| Ok(w.write_all(text.as_bytes())?))
                }
                Format::Csv => emit(&common, "ratings.csv", |w| {
                    Ok(write_ratings_csv(w, &sc.matrix, &sc.users, &sc.items)?)
                }),
            }
        }
        Command::Run { config, common } => {
            let report = commands::run(&load(&config, &common)?)?;
            match common.format {
                Format::Json => emit_json(&common, "report", &report),
                Format::Csv => emit(&common, "report.csv", |w| write_run_csv(w, &report)),
            }
        }
        Command::FindEta { config, inputs, common } => {
            let report = match config {
                Some(path) => commands::find_eta_for(&load(&path, &common)?)?,
                None => commands::find_eta_raw(raw_inputs(&inputs)?)?,
            };
            emit_any(&common, "find-eta", &report)
        }
        Command::Check { config, common } => {
            emit_any(&common, "check", &commands::check(&load(&config, &common)?)?)
        }
        Command::Robustness { config, probes, common } => emit_any(
            &common,
            "robustness",
            &commands::robustness(&load(&config, &common)?, probes)?,
        ),
        Command::McDemo { config, q, trials, common } => emit_any(
            &common,
            "mc-demo",
            &commands::mc_demo(&load(&config, &common)?, q, trials)?,
        ),
        Command::Sweep { config, replicates, common } => {
            let specs = config
                .iter()
                .map(|p| ScenarioSpec::load(p))
                .collect::<Result<Vec<_>>>()?;
            let report = commands::sweep(&specs, common.seed, replicates)?;
            match common.format {
                Format::Json => emit_json(&common, "sweep", &report),
                Format::Csv => emit(&common, "sweep.csv", |w| write_sweep_csv(w, &report)),
            }
        }
        Command::Schema { common } => {
            let schema = run_report_schema()?;
            emit(&common, "report.schema.json", |w| Ok(w.write_all(schema.as_bytes())?))
        }
    }
}

fn load(path: &Path, common: &Common) -> Result<Scenario> {
    materialize(&ScenarioSpec::load(path)?, common.seed)
}

fn raw_inputs(r: &RawInputs) -> Result<FinderInputsDoc> {
    match (r.sigma_kmaj, r.alpha, r.n_bar, r.picky_col_sq, r.av, r.kappa, r.coll_size) {
        (Some(sigma_kmaj), Some(alpha), Some(n_bar), Some(picky_col_sq), Some(av), Some(kappa), Some(coll_size)) => {
            Ok(FinderInputsDoc { sigma_kmaj, alpha, n_bar, picky_col_sq, av, kappa, coll_size })
        }
        _ => bail!("give --config or all of --sigma-kmaj --alpha --n-bar --picky-col-sq --av --kappa --coll-size"),
    }
}

/// Writes `name` into the output directory, or to standard output for `-`.
fn emit(common: &Common, name: &str, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if common.out.as_os_str() == "-" {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        write(&mut lock)?;
        return Ok(lock.flush()?);
    }
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    let path = common.out.join(name);
    let mut file = std::io::BufWriter::new(
        std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    );
    write(&mut file)?;
    file.flush()?;
    println!("{}", path.display());
    Ok(())
}

fn emit_json<T: Serialize>(common: &Common, stem: &str, value: &T) -> Result<()> {
    let text = to_canonical_json(value)?;
    emit(common, &format!("{stem}.json"), |w| Ok(w.write_all(text.as_bytes())?))
}

fn emit_any<T: Serialize>(common: &Common, stem: &str, value: &T) -> Result<()> {
    match common.format {
        Format::Json => emit_json(common, stem, value),
        Format::Csv => emit(common, &format!("{stem}.csv"), |w| write_flat_csv(w, value)),
    }
}
