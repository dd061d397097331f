use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use tdse_core::analysis::{compare_arms, DEFAULT_FLOAT_TOL};
use tdse_core::arena::{FakeRunner, ProcessRunner, SubjectRunner};
use tdse_core::engine::{
    build_report, parse_override, render_arm_comparison, render_report_text, run_study, EngineError, RunContext,
    RunRecord, RunStatus,
};
use tdse_core::pipeline::{parse_study, validate, StudyScript};
use tdse_core::srm::{import_long_jsonl, Coord, Table};
use tdse_core::Value;

#[derive(Parser)]
#[command(name = "tdse", version, about = "Run test-driven experiments over generated code")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a study script without running it.
    Validate { script: PathBuf },
    /// Run a study and write the run directory.
    Run {
        script: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Override a global (`key=value`) or an action setting (`action.key=value`).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Use this provider for every generate action (openai, ollama, mock).
        #[arg(long)]
        provider: Option<String>,
        #[arg(long, value_enum, default_value_t = RunnerKind::Process)]
        runner: RunnerKind,
        /// Fake runner table; defaults to fake_runner.json next to the script.
        #[arg(long)]
        fake_table: Option<PathBuf>,
        /// Harness entry point for the process runner.
        #[arg(long, env = "TDSE_HARNESS")]
        harness: Option<PathBuf>,
    },
    /// Print verdicts and clusters for a finished run.
    Report {
        run_dir: PathBuf,
        /// Compare arms along this coordinate dimension.
        #[arg(long)]
        arms: Option<String>,
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RunnerKind {
    Process,
    Fake,
}

/// An error paired with the exit code it maps to.
struct Exit(u8, anyhow::Error);

trait ExitWith<T> {
    fn exit(self, code: u8) -> Result<T, Exit>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit(self, code: u8) -> Result<T, Exit> {
        self.map_err(|e| Exit(code, e.into()))
    }
}

fn read_script(path: &Path) -> Result<StudyScript, Exit> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).exit(2)?;
    parse_study(&text).with_context(|| format!("parsing {}", path.display())).exit(1)
}

fn cmd_validate(script: &Path) -> Result<u8, Exit> {
    let s = read_script(script)?;
    let diags = validate(&s);
    if diags.is_empty() {
        println!("{}: ok ({} actions)", script.display(), s.actions.len());
        return Ok(0);
    }
    for d in &diags {
        println!("{d}");
    }
    Ok(1)
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    script_path: &Path,
    out: &Path,
    set: &[String],
    provider: Option<&str>,
    runner: RunnerKind,
    fake_table: Option<&Path>,
    harness: Option<&Path>,
) -> Result<u8, Exit> {
    let script = read_script(script_path)?;
    let base_dir = script_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut overrides: Vec<(String, Value)> = set
        .iter()
        .map(|s| parse_override(s).ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{s}`")))
        .collect::<Result<_>>()
        .exit(2)?;
    if let Some(p) = provider {
        overrides.push(("provider".into(), Value::Str(p.into())));
        // An action-level provider would otherwise win over the global.
        for a in script.actions.iter().filter(|a| a.config.contains_key("provider")) {
            overrides.push((format!("{}.provider", a.name), Value::Str(p.into())));
        }
    }
    let runner: Box<dyn SubjectRunner> = match runner {
        RunnerKind::Fake => {
            let table = fake_table.map(Path::to_path_buf).unwrap_or_else(|| base_dir.join("fake_runner.json"));
            Box::new(FakeRunner::from_path(&table).map_err(|e| anyhow!(e)).exit(2)?)
        }
        RunnerKind::Process => {
            let harness = harness.ok_or_else(|| anyhow!("the process runner needs --harness (or TDSE_HARNESS)")).exit(3)?;
            if !harness.is_file() {
                return Err(Exit(3, anyhow!("harness {} not found", harness.display())));
            }
            Box::new(ProcessRunner::new(harness))
        }
    };
    let ctx = RunContext { runner: runner.as_ref(), base_dir, out_dir: out.to_path_buf() };
    let outcome = match run_study(&script, &overrides, &ctx) {
        Ok(o) => o,
        Err(e @ EngineError::Invalid(_)) => return Err(Exit(1, e.into())),
        Err(e @ EngineError::Io { .. }) => return Err(Exit(2, e.into())),
    };
    for e in &outcome.report.entries {
        let fully = e.verdicts.iter().filter(|v| v.fully_correct()).count();
        let sizes: Vec<String> = e.clusters.iter().map(|c| c.len().to_string()).collect();
        println!(
            "{}: {fully}/{} candidates fully correct, clusters {{{}}}",
            e.coord,
            e.verdicts.len(),
            sizes.join(",")
        );
    }
    println!("run directory: {}", out.display());
    let record = &outcome.record;
    match record.status {
        RunStatus::Completed => Ok(0),
        RunStatus::Failed => {
            eprintln!("run failed: {}", record.error.as_deref().unwrap_or("unknown error"));
            Ok(if record.error_kind.is_some_and(|k| k.is_unavailable()) { 3 } else { 1 })
        }
    }
}

fn load_run(dir: &Path) -> Result<(RunRecord, BTreeMap<Coord, Table>)> {
    let run_json = dir.join("run.json");
    let record: RunRecord = serde_json::from_str(
        &std::fs::read_to_string(&run_json).with_context(|| format!("reading {}", run_json.display()))?,
    )
    .with_context(|| format!("parsing {}", run_json.display()))?;
    let srh = dir.join("srh.jsonl");
    let text = std::fs::read_to_string(&srh).with_context(|| format!("reading {}", srh.display()))?;
    let tables = import_long_jsonl(&text).with_context(|| format!("parsing {}", srh.display()))?;
    Ok((record, tables))
}

fn cmd_report(dir: &Path, arms: Option<&str>, json: bool) -> Result<u8, Exit> {
    let (record, tables) = load_run(dir).exit(2)?;
    let report = build_report(&record.study, tables.iter(), DEFAULT_FLOAT_TOL);
    let comparisons = match arms {
        None => Vec::new(),
        Some(dim) => {
            let mut groups: BTreeMap<Coord, Vec<(&Coord, &Table)>> = BTreeMap::new();
            for (c, t) in &tables {
                groups.entry(c.without(dim)).or_default().push((c, t));
            }
            let mut out = Vec::new();
            for group in groups.into_values() {
                let cmp = compare_arms(group, dim, DEFAULT_FLOAT_TOL)
                    .with_context(|| format!("cannot compare arms along `{dim}`"))
                    .exit(1)?;
                out.push(cmp);
            }
            out
        }
    };
    if json {
        let doc = serde_json::json!({ "report": report, "armComparisons": comparisons });
        println!("{}", serde_json::to_string_pretty(&doc).expect("report serializes"));
    } else {
        print!("{}", render_report_text(&report));
        for c in &comparisons {
            print!("{}", render_arm_comparison(c));
        }
        if record.status == RunStatus::Failed {
            println!("\nrun FAILED: {}", record.error.as_deref().unwrap_or("unknown error"));
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { script } => cmd_validate(script),
        Command::Run { script, out, set, provider, runner, fake_table, harness } => {
            cmd_run(script, out, set, provider.as_deref(), *runner, fake_table.as_deref(), harness.as_deref())
        }
        Command::Report { run_dir, arms, json } => cmd_report(run_dir, arms.as_deref(), *json),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Exit(code, err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
