//! The execution action: run every candidate against every sheet under a
//! wall-clock budget and record per-statement observations.

use std::io::{BufRead, BufReader, Read, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use glob::Pattern;
use serde::Deserialize;
use serde_json::Value as Json;
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::par::{map_ordered, Parallelism};
use crate::pipeline::Profile;
use crate::srm::{Observation, Recorder, SrmError, StimulusMatrix};
use crate::ssn::InvocationPlan;

pub const DEFAULT_TIMEOUT_MS: u64 = 5000;
pub const KILL_GRACE: Duration = Duration::from_millis(500);
const STDERR_EXCERPT: usize = 800;

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTask {
    pub matrix_id: String,
    pub impl_id: String,
    pub plan: InvocationPlan,
    pub source_text: String,
    pub profile: Profile,
}

impl ExecutionTask {
    pub fn task_id(&self) -> String {
        format!("{}/{}/{}", self.matrix_id, self.impl_id, self.plan.sheet_name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Terminal {
    Completed,
    TimedOut,
    /// The subject could not be loaded or the runner died mid-plan.
    Crashed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunnerResult {
    /// Observations for the first `len` statements, in statement order.
    pub per_statement: Vec<Observation>,
    pub terminal: Terminal,
}

/// The runner itself is broken (as opposed to the subject misbehaving).
#[derive(Debug, Clone, PartialEq, Error)]
#[error("subject runner unavailable: {0}")]
pub struct RunnerUnavailable(pub String);

pub trait SubjectRunner: Send + Sync {
    fn run(&self, task: &ExecutionTask) -> Result<RunnerResult, RunnerUnavailable>;
}

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("action precondition failed: {0}")]
    ActionPreconditionFailed(String),
    #[error(transparent)]
    RunnerUnavailable(#[from] RunnerUnavailable),
    #[error(transparent)]
    Srm(#[from] SrmError),
}

/// One observation per plan statement; statements the runner never reached
/// are filled from the terminal state.
pub fn fill_observations(plan: &InvocationPlan, result: RunnerResult) -> Vec<Observation> {
    let n = plan.statements.len();
    let mut out = result.per_statement;
    out.truncate(n);
    while out.len() < n {
        out.push(match &result.terminal {
            Terminal::TimedOut => Observation::timeout(format!("timed out after {} ms", plan.timeout_ms)),
            Terminal::Crashed(detail) => Observation::load_error(detail.clone()),
            Terminal::Completed => Observation::adapter_error("runner produced no observation"),
        });
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct ArenaOptions {
    pub timeout_ms: u64,
    pub parallelism: Parallelism,
}

impl Default for ArenaOptions {
    fn default() -> Self {
        Self { timeout_ms: DEFAULT_TIMEOUT_MS, parallelism: Parallelism::Auto }
    }
}

/// Runs every (candidate, sheet) pair whose cells are still empty and
/// returns the extended matrix. Tasks are ordered by implId, then sheet.
pub fn execute_matrix(
    m: &StimulusMatrix,
    runner: &dyn SubjectRunner,
    profile: &Profile,
    opts: ArenaOptions,
) -> Result<StimulusMatrix, ArenaError> {
    if m.implementations.is_empty() {
        return Err(ArenaError::ActionPreconditionFailed(format!("matrix `{}` has no implementations", m.id)));
    }
    let plans = m.plans(opts.timeout_ms)?;
    let mut impls: Vec<_> = m.implementations.iter().collect();
    impls.sort_by(|a, b| a.impl_id.cmp(&b.impl_id));
    let mut tasks = Vec::new();
    for imp in impls {
        for plan in &plans {
            let pending = plan
                .statements
                .iter()
                .any(|s| m.table.row_index(&plan.sheet_name, s.index).is_some_and(|r| {
                    m.table.column_index(&imp.impl_id).is_some_and(|c| m.table.cell(r, c).is_none())
                }));
            if pending {
                tasks.push((
                    imp.load_error.clone(),
                    ExecutionTask {
                        matrix_id: m.id.clone(),
                        impl_id: imp.impl_id.clone(),
                        plan: plan.clone(),
                        source_text: imp.source_text.clone(),
                        profile: profile.clone(),
                    },
                ));
            }
        }
    }
    let recorder = Recorder::new(m.table.clone());
    let results = map_ordered(&tasks, opts.parallelism, |(load_error, task)| -> Result<(), ArenaError> {
        let result = match load_error {
            Some(detail) => RunnerResult { per_statement: Vec::new(), terminal: Terminal::Crashed(detail.clone()) },
            None => runner.run(task)?,
        };
        for (st, obs) in task.plan.statements.iter().zip(fill_observations(&task.plan, result)) {
            recorder.record(&task.plan.sheet_name, st.index, &task.impl_id, obs)?;
        }
        Ok(())
    });
    results.into_iter().collect::<Result<(), _>>()?;
    let mut out = m.clone();
    out.table = recorder.into_inner();
    Ok(out)
}

/// Table-driven runner for tests and offline runs.
///
/// Rules are tried in order for each statement; the first rule whose filters
/// all match decides the outcome. A rule either yields an observation or
/// stops the task (`"stop": "timeout"` or `"stop": {"crash": "detail"}`).
#[derive(Debug, Clone, Default, Deserialize)]
pub struct FakeRunner {
    #[serde(default)]
    pub default: Option<Observation>,
    #[serde(default)]
    pub rules: Vec<FakeRule>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FakeRule {
    #[serde(default, with = "pattern_opt")]
    pub impl_id: Option<Pattern>,
    #[serde(default)]
    pub source_contains: Option<String>,
    #[serde(default, with = "pattern_opt")]
    pub sheet: Option<Pattern>,
    #[serde(default)]
    pub index: Option<usize>,
    #[serde(default)]
    pub observation: Option<Observation>,
    #[serde(default)]
    pub stop: Option<FakeStop>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum FakeStop {
    Timeout,
    Crash(String),
}

mod pattern_opt {
    use glob::Pattern;
    use serde::{Deserialize, Deserializer};

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Pattern>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|p| Pattern::new(&p).map_err(serde::de::Error::custom))
            .transpose()
    }
}

impl FakeRule {
    fn matches(&self, task: &ExecutionTask, index: usize) -> bool {
        self.impl_id.as_ref().is_none_or(|p| p.matches(&task.impl_id))
            && self.source_contains.as_ref().is_none_or(|s| task.source_text.contains(s.as_str()))
            && self.sheet.as_ref().is_none_or(|p| p.matches(&task.plan.sheet_name))
            && self.index.is_none_or(|i| i == index)
    }
}

impl FakeRunner {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn from_path(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

impl SubjectRunner for FakeRunner {
    fn run(&self, task: &ExecutionTask) -> Result<RunnerResult, RunnerUnavailable> {
        let mut per_statement = Vec::new();
        for st in &task.plan.statements {
            let rule = self.rules.iter().find(|r| r.matches(task, st.index));
            match rule {
                Some(FakeRule { stop: Some(FakeStop::Timeout), .. }) => {
                    return Ok(RunnerResult { per_statement, terminal: Terminal::TimedOut })
                }
                Some(FakeRule { stop: Some(FakeStop::Crash(d)), .. }) => {
                    return Ok(RunnerResult { per_statement, terminal: Terminal::Crashed(d.clone()) })
                }
                Some(FakeRule { observation: Some(obs), .. }) => per_statement.push(obs.clone()),
                _ => match &self.default {
                    Some(obs) => per_statement.push(obs.clone()),
                    None => {
                        let detail = format!("fake runner has no rule for {} statement {}", task.task_id(), st.index);
                        return Ok(RunnerResult { per_statement, terminal: Terminal::Crashed(detail) });
                    }
                },
            }
        }
        Ok(RunnerResult { per_statement, terminal: Terminal::Completed })
    }
}

/// Spawns `interpreter harness` per task, one fresh process per sheet.
///
/// The candidate is written to a private temporary directory; the process
/// starts in an empty working directory with a cleared environment (only
/// `PATH` survives) and in its own process group, which is killed as a whole
/// when the budget runs out.
#[derive(Debug, Clone)]
pub struct ProcessRunner {
    pub harness: PathBuf,
    /// Used when the task's profile names no interpreter.
    pub interpreter: String,
    pub grace: Duration,
}

impl ProcessRunner {
    pub fn new(harness: impl Into<PathBuf>) -> Self {
        Self { harness: harness.into(), interpreter: "python3".into(), grace: KILL_GRACE }
    }
}

fn kill_group(pid: u32) {
    // SAFETY: plain syscall; a stale or empty group only yields ESRCH.
    unsafe {
        libc::kill(-(pid as libc::pid_t), libc::SIGKILL);
    }
}

fn tail(text: &str, max: usize) -> &str {
    let mut start = text.len().saturating_sub(max);
    while !text.is_char_boundary(start) {
        start += 1;
    }
    text[start..].trim()
}

/// Parses harness stdout. Returns the statement observations and, when the
/// harness reported a load failure, its detail.
fn parse_observation_lines(lines: &[String], plan: &InvocationPlan) -> Result<(Vec<Observation>, Option<String>), String> {
    let mut out = Vec::new();
    for line in lines.iter().filter(|l| !l.trim().is_empty()) {
        let json: Json = serde_json::from_str(line).map_err(|e| format!("unparseable observation line: {e}"))?;
        let obs: Observation = serde_json::from_value(json.clone()).map_err(|e| format!("invalid observation: {e}"))?;
        let index = json.get("index").and_then(Json::as_u64);
        if obs.status == crate::srm::Status::LoadError && out.is_empty() && index.is_none_or(|i| i == 0) {
            return Ok((out, Some(obs.detail)));
        }
        let expected = plan.statements.get(out.len()).map(|s| s.index);
        if index.map(|i| i as usize) != expected {
            return Err(format!("observation for statement {index:?} where {expected:?} was expected"));
        }
        out.push(obs);
    }
    Ok((out, None))
}

impl SubjectRunner for ProcessRunner {
    fn run(&self, task: &ExecutionTask) -> Result<RunnerResult, RunnerUnavailable> {
        enforce_timeout(self, task, task.plan.timeout_ms)
    }
}

/// Runs one task under a wall-clock budget measured from process start.
pub fn enforce_timeout(runner: &ProcessRunner, task: &ExecutionTask, budget_ms: u64) -> Result<RunnerResult, RunnerUnavailable> {
    let unavailable = |what: &str, e: std::io::Error| RunnerUnavailable(format!("{what}: {e}"));
    let dir = tempfile::tempdir().map_err(|e| unavailable("temporary directory", e))?;
    let module = dir.path().join("candidate.py");
    std::fs::write(&module, &task.source_text).map_err(|e| unavailable("writing candidate", e))?;
    let work = dir.path().join("work");
    std::fs::create_dir(&work).map_err(|e| unavailable("working directory", e))?;
    let plan = task.plan.to_wire(&task.task_id(), &module.to_string_lossy()).to_string();

    let interpreter = task.profile.interpreter.as_deref().unwrap_or(&runner.interpreter);
    let mut cmd = Command::new(interpreter);
    cmd.arg(&runner.harness)
        .current_dir(&work)
        .env_clear()
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    if let Some(path) = std::env::var_os("PATH") {
        cmd.env("PATH", path);
    }
    let started = Instant::now();
    let mut child = cmd.spawn().map_err(|e| unavailable(&format!("spawning {interpreter}"), e))?;
    let pid = child.id();

    let mut stdin = child.stdin.take().expect("piped");
    let writer = std::thread::spawn(move || {
        // A subject that exits early closes the pipe; that is not our error.
        let _ = stdin.write_all(plan.as_bytes());
    });
    let lines = Arc::new(Mutex::new(Vec::new()));
    let stdout = child.stdout.take().expect("piped");
    let sink = lines.clone();
    let reader = std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            match line {
                Ok(l) => sink.lock().expect("stdout lines").push(l),
                Err(_) => break,
            }
        }
    });
    let mut stderr = child.stderr.take().expect("piped");
    let err_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    });

    let budget = Duration::from_millis(budget_ms);
    let status = child
        .wait_timeout(budget.saturating_sub(started.elapsed()))
        .map_err(|e| unavailable("waiting for subject", e))?;
    let timed_out = status.is_none();
    // Reap the whole group either way so stray grandchildren release the pipes.
    kill_group(pid);
    let status = match status {
        Some(s) => s,
        None => child.wait().map_err(|e| unavailable("reaping subject", e))?,
    };
    let _ = writer.join();
    let _ = reader.join();
    let stderr_text = err_reader.join().unwrap_or_default();
    let lines = std::mem::take(&mut *lines.lock().expect("stdout lines"));
    log::debug!("{} finished in {:?} (exit {status})", task.task_id(), started.elapsed());

    let (per_statement, load_error) = match parse_observation_lines(&lines, &task.plan) {
        Ok(parsed) => parsed,
        Err(protocol) => {
            return Ok(RunnerResult { per_statement: Vec::new(), terminal: Terminal::Crashed(format!("protocol error: {protocol}")) })
        }
    };
    let terminal = if timed_out {
        Terminal::TimedOut
    } else if let Some(detail) = load_error {
        Terminal::Crashed(detail)
    } else if status.success() {
        Terminal::Completed
    } else {
        let code = status.code().map_or_else(|| "signal".to_string(), |c| c.to_string());
        Terminal::Crashed(format!("exit {code}: {}", tail(&stderr_text, STDERR_EXCERPT)))
    };
    Ok(RunnerResult { per_statement, terminal })
}
