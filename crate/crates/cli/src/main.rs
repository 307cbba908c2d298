use std::path::PathBuf;
use std::process::ExitCode;

use acgap_core::experiment::{
    load_traces, run_experiment, summarize, ExperimentConfig, Mode, ThresholdReference, VerifySettings,
};
use acgap_core::Error;
use clap::{Parser, Subcommand, ValueEnum};

/// Exact tabular actor-critic laboratory.
#[derive(Parser)]
#[command(name = "acgap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Sample,
    Dp,
    Verify,
}

#[derive(Subcommand)]
enum Command {
    /// Run a DP, sample-based or verify experiment.
    Run {
        /// Experiment config (JSON).
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Built-in config instead of a file.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[command(flatten)]
        common: Common,
        /// Only run the named agents (repeatable).
        #[arg(long = "agent")]
        agents: Vec<String>,
        /// Print the resolved config and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run the certification checks; exits 1 on any failure.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Print the JSON report instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Summarize trace files or run directories.
    Summarize {
        /// `<agent>_seed<k>.csv` files or run output directories.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Steps-to-threshold fraction.
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        /// Measure the threshold against each trace's own final value
        /// instead of J*.
        #[arg(long)]
        own_final: bool,
        /// Override J* (otherwise read from the run manifest).
        #[arg(long)]
        j_star: Option<f64>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, e.g. 0,1,2.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Parallel (agent, seed) jobs.
    #[arg(long)]
    jobs: Option<usize>,
}

/// Exit 2 for anything the user can fix in the config or arguments.
fn is_config_error(e: &anyhow::Error) -> bool {
    matches!(
        e.downcast_ref::<Error>(),
        Some(
            Error::InvalidConfig(_)
                | Error::InvalidSpec(_)
                | Error::InvalidMdp(_)
                | Error::Json(_)
                | Error::SchemaMismatch(_)
                | Error::InvalidEta(_)
        )
    ) || e.downcast_ref::<ConfigError>().is_some()
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct ConfigError(String);

fn load_config(path: Option<&PathBuf>, preset: Option<Preset>) -> anyhow::Result<ExperimentConfig> {
    Ok(match (path, preset) {
        (Some(p), _) => ExperimentConfig::load(p).map_err(|e| match e {
            Error::Io(io) => anyhow::Error::new(ConfigError(format!("{}: {io}", p.display()))),
            other => other.into(),
        })?,
        (None, Some(Preset::Sample)) => ExperimentConfig::default_sample(),
        (None, Some(Preset::Dp)) => ExperimentConfig::default_dp(),
        (None, Some(Preset::Verify)) => ExperimentConfig::default_verify(),
        (None, None) => return Err(ConfigError("either --config or --preset is required".into()).into()),
    })
}

fn apply_common(cfg: &mut ExperimentConfig, common: &Common) -> anyhow::Result<PathBuf> {
    if let Some(seeds) = &common.seeds {
        cfg.seeds = seeds.clone();
    }
    common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| ConfigError("no output directory: pass --out or set \"out\"".into()).into())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            preset,
            common,
            agents,
            dry_run,
        } => {
            let mut cfg = load_config(config.as_ref(), preset)?;
            if !agents.is_empty() {
                for a in &agents {
                    if !cfg.agents.iter().any(|e| &e.resolved_name() == a) {
                        return Err(ConfigError(format!("no agent named {a:?}")).into());
                    }
                }
                cfg.agents.retain(|e| agents.contains(&e.resolved_name()));
            }
            if dry_run {
                cfg.validate()?;
                println!("{}", cfg.to_json());
                return Ok(ExitCode::SUCCESS);
            }
            let out = apply_common(&mut cfg, &common)?;
            let outcome = run_experiment(&cfg, &out, common.jobs)?;
            if cfg.mode == Mode::Verify {
                print!("{}", std::fs::read_to_string(out.join("verify_report.txt"))?);
            } else {
                let (traces, j_star) = load_traces(std::slice::from_ref(&out))?;
                let reference = j_star.map_or(ThresholdReference::OwnFinal, ThresholdReference::Optimal);
                print!("{}", summarize(&traces, 0.9, reference)?.to_text());
            }
            eprintln!("wrote {}", outcome.out_dir.display());
            Ok(if outcome.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Verify { config, common, json } => {
            let mut cfg = match config {
                Some(p) => load_config(Some(&p), None)?,
                None => ExperimentConfig::default_verify(),
            };
            if cfg.mode != Mode::Verify {
                return Err(ConfigError("verify needs a config with \"mode\": \"verify\"".into()).into());
            }
            if let Some(seeds) = &common.seeds {
                // Seeds select the instance range [min, max].
                let v = cfg.verify.get_or_insert_with(VerifySettings::default);
                let (lo, hi) = (seeds.iter().min(), seeds.iter().max());
                if let (Some(&lo), Some(&hi)) = (lo, hi) {
                    v.seed_start = lo;
                    v.seed_end = hi + 1;
                }
            }
            let out = common.out.clone().or_else(|| cfg.out.clone());
            let out = match out {
                Some(o) => o,
                None => {
                    let tmp = tempfile::tempdir()?;
                    let outcome = run_experiment(&cfg, tmp.path(), common.jobs)?;
                    print_report(tmp.path(), json)?;
                    return Ok(exit_for(outcome.passed));
                }
            };
            let outcome = run_experiment(&cfg, &out, common.jobs)?;
            print_report(&out, json)?;
            Ok(exit_for(outcome.passed))
        }
        Command::Summarize {
            paths,
            threshold,
            own_final,
            j_star,
            json,
        } => {
            if !(threshold > 0.0 && threshold <= 1.0) {
                return Err(ConfigError("--threshold must be in (0, 1]".into()).into());
            }
            let (traces, manifest_j) = load_traces(&paths)?;
            let reference = match (own_final, j_star.or(manifest_j)) {
                (false, Some(j)) => ThresholdReference::Optimal(j),
                _ => ThresholdReference::OwnFinal,
            };
            let summary = summarize(&traces, threshold, reference)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                print!("{}", summary.to_text());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn exit_for(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn print_report(dir: &std::path::Path, json: bool) -> anyhow::Result<()> {
    let file = if json { "verify_report.json" } else { "verify_report.txt" };
    print!("{}", std::fs::read_to_string(dir.join(file))?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}
