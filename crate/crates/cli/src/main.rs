//! `fleet`: headless runner, ablation driver, replayer, scenario validator
//! and gateway server.
//!
//! Exit codes: 0 success, 1 runtime or usage error, 2 validation failure
//! (bad scenario, corrupt bundle or checkpoint), 3 ablation ordering
//! failure under `--strict`, 4 replay hash mismatch.

use std::collections::BTreeMap;
use std::fs;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fleet_core::bench::{
    ablation_compare, emit_ablation, emit_report, emit_table, run_suite, run_suite_with, ReportFormat,
    REFERENCE_ABLATION,
};
use fleet_core::gateway::{Gateway, GatewayConfig};
use fleet_core::planner::CREDENTIAL_ENV;
use fleet_core::scenes::bundled_scenes;
use fleet_core::session::{report_hash, BackendChoice, DecisionPolicy, ReplayBundle};
use fleet_core::world::{load_scenario, min_steps, SearchError, DEFAULT_SEARCH_BUDGET};
use fleet_core::{Decision, Mode, Scenario, Session, SessionConfig};
use tracing_subscriber::EnvFilter;

const EXIT_RUNTIME: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_ABLATION: u8 = 3;
const EXIT_MISMATCH: u8 = 4;

#[derive(Parser)]
#[command(name = "fleet", version, about = "Supervised multi-robot session runner")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run scenarios and print a report.
    Run(RunArgs),
    /// Run all three modes over a scene set and compare them.
    Ablate(AblateArgs),
    /// Rerun a replay bundle or resume a checkpoint to completion.
    Replay { file: PathBuf },
    /// Check scenario files and print their computed minimum step counts.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Serve the operator gateway.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        /// Pause between ticks of running sessions, in milliseconds.
        #[arg(long, default_value_t = 100)]
        tick_ms: u64,
    },
}

#[derive(Args)]
struct SceneArgs {
    /// Scenario files.
    scenarios: Vec<PathBuf>,
    /// `bundled` for the built-in scenes, or a directory of scenario files.
    #[arg(long)]
    scenes: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenes: SceneArgs,
    /// full, no-human or no-human-no-verify.
    #[arg(long, default_value = "full")]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    reps: u32,
    /// rule, external or recorded.
    #[arg(long, default_value = "rule")]
    backend: String,
    /// Program for the external backend.
    #[arg(long)]
    backend_cmd: Option<String>,
    /// Argument passed to the external backend (repeatable).
    #[arg(long = "backend-arg")]
    backend_args: Vec<String>,
    /// JSON-lines file of captured backend answers for the recorded backend.
    #[arg(long)]
    recorded: Option<PathBuf>,
    /// auto-yes, auto-proceed, or a comma-separated yes/no script.
    #[arg(long, default_value = "auto-yes")]
    decisions: String,
    /// table, csv or jsonl.
    #[arg(long, default_value = "table")]
    format: String,
    /// Directory for the report, replay bundles and their index.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    scenes: SceneArgs,
    #[arg(long, default_value_t = 10)]
    reps: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Exit 3 unless both the ordering and the strict exception checks hold.
    #[arg(long)]
    strict: bool,
    /// Directory for per-mode CSV reports.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_RUNTIME)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(cli.verbose);
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run(args) => run(args),
        Command::Ablate(args) => ablate(args),
        Command::Replay { file } => replay(&file),
        Command::Validate { files } => Ok(validate(&files)),
        Command::Serve { bind, tick_ms } => serve(&bind, tick_ms),
    }
}

fn load_scenes(args: &SceneArgs) -> Result<Vec<Scenario>> {
    let mut paths = args.scenarios.clone();
    let mut scenes = Vec::new();
    match args.scenes.as_deref() {
        None => {}
        Some("bundled") => scenes.extend(bundled_scenes()),
        Some(dir) => {
            let mut found: Vec<PathBuf> = fs::read_dir(dir)
                .with_context(|| format!("reading scene directory {dir}"))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "toml" || x == "scn"))
                .collect();
            found.sort();
            paths.extend(found);
        }
    }
    for path in &paths {
        scenes.push(load_scenario(path).with_context(|| format!("loading {}", path.display()))?);
    }
    if scenes.is_empty() {
        bail!("no scenarios given (pass files or --scenes bundled|DIR)");
    }
    Ok(scenes)
}

fn parse_decisions(text: &str) -> Result<DecisionPolicy> {
    Ok(match text {
        "auto-yes" => DecisionPolicy::AutoYes,
        "auto-proceed" => DecisionPolicy::AutoProceed,
        script => DecisionPolicy::Scripted(
            script
                .split(',')
                .map(|d| Decision::parse(d).with_context(|| format!("bad decision `{d}` (expected yes or no)")))
                .collect::<Result<_>>()?,
        ),
    })
}

fn backend_choice(args: &RunArgs) -> Result<BackendChoice> {
    Ok(match args.backend.as_str() {
        "rule" => BackendChoice::RuleBased,
        "external" => {
            let program = args
                .backend_cmd
                .clone()
                .context("--backend external needs --backend-cmd")?;
            // Only presence is ever reported; the value stays out of logs.
            tracing::info!(
                program = %program,
                credential_present = std::env::var_os(CREDENTIAL_ENV).is_some(),
                "using external planner backend"
            );
            BackendChoice::External {
                program,
                args: args.backend_args.clone(),
            }
        }
        "recorded" => {
            let path = args
                .recorded
                .as_ref()
                .context("--backend recorded needs --recorded FILE")?;
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let responses = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("parsing {}", path.display()))?;
            BackendChoice::Recorded { responses }
        }
        other => bail!("unknown backend `{other}` (expected rule, external or recorded)"),
    })
}

fn run(args: RunArgs) -> Result<u8> {
    let format: ReportFormat = args.format.parse()?;
    let scenes = load_scenes(&args.scenes)?;
    let mut config = SessionConfig::new(args.mode, args.seed).with_policy(parse_decisions(&args.decisions)?);
    config.backend = backend_choice(&args)?;

    let Some(out) = &args.out else {
        let suite = run_suite(&scenes, &config, args.reps)?;
        print!("{}", emit_report(&suite.summary, format));
        return Ok(0);
    };

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut index = String::new();
    let mut write_error = None;
    let mut n = 0usize;
    let suite = run_suite_with(&scenes, &config, args.reps, |scenario, report| {
        n += 1;
        let mut run_config = config.clone();
        run_config.seed = report.seed;
        let bundle = ReplayBundle::record(&run_config, scenario, report);
        let path = out.join(format!("run{n}.bundle"));
        if let Err(e) = fs::write(&path, bundle.to_json()) {
            write_error.get_or_insert(anyhow::Error::new(e).context(format!("writing {}", path.display())));
        }
        let entry = serde_json::json!({
            "scenario": report.scenario,
            "seed": report.seed,
            "success": report.success,
            "step_count": report.step_count,
            "report_sha256": bundle.report_sha256,
            "bundle": path.display().to_string(),
        });
        index.push_str(&entry.to_string());
        index.push('\n');
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }
    let report = emit_report(&suite.summary, format);
    let ext = match format {
        ReportFormat::Table => "txt",
        ReportFormat::Csv => "csv",
        ReportFormat::JsonLines => "jsonl",
    };
    fs::write(out.join(format!("report.{ext}")), &report)?;
    fs::write(out.join("bundles.jsonl"), &index)?;
    print!("{report}");
    eprintln!("wrote {n} replay bundles to {}", out.display());
    Ok(0)
}

fn ablate(args: AblateArgs) -> Result<u8> {
    let scenes = load_scenes(&args.scenes)?;
    let mut suites = BTreeMap::new();
    for mode in Mode::ALL {
        let suite = run_suite(&scenes, &SessionConfig::new(mode, args.seed), args.reps)?;
        suites.insert(mode, suite.summary);
    }
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        for (mode, summary) in &suites {
            fs::write(out.join(format!("{mode}.csv")), emit_report(summary, ReportFormat::Csv))?;
        }
    }
    let report = ablation_compare(&suites)?;
    let ordered: Vec<_> = Mode::ALL.iter().map(|m| &suites[m]).collect();
    print!("{}", emit_table(&ordered, &REFERENCE_ABLATION));
    println!();
    print!("{}", emit_ablation(&report));
    let pass = report.direction_pass() && report.strict_pass();
    if args.strict && !pass {
        eprintln!("ablation ordering check failed");
        return Ok(EXIT_ABLATION);
    }
    Ok(0)
}

fn replay(file: &Path) -> Result<u8> {
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    if text.trim_start().starts_with('{') {
        let bundle = match ReplayBundle::from_json(&text) {
            Ok(b) => b,
            Err(e) => {
                eprintln!("{}: {e}", file.display());
                return Ok(EXIT_INVALID);
            }
        };
        let (report, same) = bundle.replay()?;
        println!("report_sha256 {}", report_hash(&report));
        if !same {
            eprintln!("report hash differs from the recorded {}", bundle.report_sha256);
            return Ok(EXIT_MISMATCH);
        }
        return Ok(0);
    }
    let mut session = match Session::resume(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", file.display());
            return Ok(EXIT_INVALID);
        }
    };
    let report = session.run_to_completion();
    println!("report_sha256 {}", report_hash(&report));
    Ok(0)
}

fn validate(files: &[PathBuf]) -> u8 {
    let mut code = 0;
    for file in files {
        let scenario = match load_scenario(file) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("{}: {e}", file.display());
                code = EXIT_INVALID;
                continue;
            }
        };
        match min_steps(&scenario, DEFAULT_SEARCH_BUDGET) {
            Ok(computed) if computed == scenario.min_steps => {
                println!("ok {}: {} min_steps={computed}", file.display(), scenario.name);
            }
            Ok(computed) => {
                eprintln!(
                    "{}: declared min_steps {} but the shortest solution takes {computed}",
                    file.display(),
                    scenario.min_steps
                );
                code = EXIT_INVALID;
            }
            Err(e @ (SearchError::Unsolvable(_) | SearchError::Goal(_))) => {
                eprintln!("{}: {e}", file.display());
                code = EXIT_INVALID;
            }
            Err(e) => {
                // Too large to search exhaustively; the file itself is fine.
                println!(
                    "ok {}: {} min_steps={} (unchecked: {e})",
                    file.display(),
                    scenario.name,
                    scenario.min_steps
                );
            }
        }
    }
    code
}

fn serve(bind: &str, tick_ms: u64) -> Result<u8> {
    let gateway = Gateway::serve(
        bind,
        GatewayConfig {
            tick_interval: Duration::from_millis(tick_ms),
        },
    )?;
    println!("listening on {}", gateway.local_addr());
    gateway.wait();
    Ok(0)
}
