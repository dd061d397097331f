//! Study orchestration: run actions in dependency order, route matrices
//! through include filters, assemble the hypercube and persist the run.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use glob::Pattern;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{compare_arms, equivalence, verdicts, ArmComparison, SheetOutcome, Verdict, DEFAULT_FLOAT_TOL};
use crate::arena::{execute_matrix, ArenaError, ArenaOptions, SubjectRunner, DEFAULT_TIMEOUT_MS};
use crate::generate::{generate_candidates, render_prompt, ProviderConfig};
use crate::par::{available_threads, Parallelism};
use crate::pipeline::{build_dag, print_study, validate, ActionDecl, ActionType, Diagnostic, StudyScript};
use crate::srm::{
    export_long, Coord, ExportFormat, Implementation, Srh, StimulusMatrix, Table, DIM_ARM, DIM_MATRIX, DIM_MODEL,
    DIM_PROMPT, DIM_STUDY,
};
use crate::value::Value;

/// Matches ids against glob patterns (`*`, `?`), keeping input order.
/// No patterns means everything. The second element is a warning when
/// patterns were given but nothing matched.
pub fn include_filter<'a>(patterns: &[String], ids: impl IntoIterator<Item = &'a str>) -> (Vec<String>, Option<String>) {
    let mut out: Vec<String> = Vec::new();
    let compiled: Vec<Option<Pattern>> = patterns.iter().map(|p| Pattern::new(p).ok()).collect();
    for id in ids {
        let hit = patterns.is_empty()
            || patterns.iter().zip(&compiled).any(|(raw, pat)| match pat {
                Some(p) => p.matches(id),
                None => raw == id,
            });
        if hit && !out.iter().any(|o| o == id) {
            out.push(id.to_string());
        }
    }
    let warning = (!patterns.is_empty() && out.is_empty())
        .then(|| format!("include [{}] matches no matrix", patterns.join(", ")));
    (out, warning)
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("study is not runnable:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorKind {
    ActionPreconditionFailed,
    ProviderUnavailable,
    GenerationFailed,
    RunnerUnavailable,
    IncompleteMatrix,
    ConflictingInputs,
    Store,
    Io,
}

impl ErrorKind {
    /// Provider or runner could not be reached at all.
    pub fn is_unavailable(self) -> bool {
        matches!(self, ErrorKind::ProviderUnavailable | ErrorKind::RunnerUnavailable)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ActionFailure {
    kind: ErrorKind,
    message: String,
}

fn fail(kind: ErrorKind, message: impl Into<String>) -> ActionFailure {
    ActionFailure { kind, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionStatus {
    Completed,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OutputShape {
    pub coord: Coord,
    pub rows: usize,
    pub columns: usize,
    pub set_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ActionRecord {
    pub name: String,
    #[serde(rename = "type")]
    pub action_type: String,
    pub status: ActionStatus,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub outputs: Vec<OutputShape>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunRecord {
    pub study: String,
    pub script_sha256: String,
    pub overrides: BTreeMap<String, serde_json::Value>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<ErrorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    pub actions: Vec<ActionRecord>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportEntry {
    pub coord: Coord,
    pub rows: usize,
    pub columns: usize,
    pub complete: bool,
    pub verdicts: Vec<Verdict>,
    pub clusters: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Report {
    pub study: String,
    pub entries: Vec<ReportEntry>,
    pub arm_comparisons: Vec<ArmComparison>,
}

/// Verdicts and clusters per coordinate, plus an arm comparison for every
/// group of coordinates that differ only in `arm`.
pub fn build_report<'a>(study: &str, tables: impl IntoIterator<Item = (&'a Coord, &'a Table)>, tol: f64) -> Report {
    let tables: Vec<(&Coord, &Table)> = tables.into_iter().collect();
    let entries = tables
        .iter()
        .map(|(coord, table)| {
            let complete = table.is_complete() && table.candidate_indices().next().is_some();
            let (verdicts, clusters) = if complete {
                let v = verdicts(table, tol).expect("complete table");
                let eq = equivalence(table, tol).expect("complete table");
                (v, eq.clusters)
            } else {
                (Vec::new(), Vec::new())
            };
            ReportEntry {
                coord: (*coord).clone(),
                rows: table.rows.len(),
                columns: table.columns.len(),
                complete,
                verdicts,
                clusters,
            }
        })
        .collect();
    let mut groups: BTreeMap<Coord, Vec<(&Coord, &Table)>> = BTreeMap::new();
    for (coord, table) in &tables {
        if coord.get(DIM_ARM).is_some() {
            groups.entry(coord.without(DIM_ARM)).or_default().push((coord, table));
        }
    }
    let arm_comparisons = groups
        .into_values()
        .filter(|g| g.len() >= 2 && g.iter().all(|(_, t)| t.is_complete()))
        .filter_map(|g| compare_arms(g, DIM_ARM, tol).ok())
        .collect();
    Report { study: study.to_string(), entries, arm_comparisons }
}

fn outcome_char(o: SheetOutcome) -> char {
    match o {
        SheetOutcome::Pass => 'P',
        SheetOutcome::Fail => 'F',
        SheetOutcome::Error => 'E',
    }
}

pub fn render_report_text(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "study {}", report.study);
    for e in &report.entries {
        let _ = writeln!(out, "\n{} ({} rows x {} columns)", e.coord, e.rows, e.columns);
        if !e.complete {
            let _ = writeln!(out, "  incomplete: no verdicts");
            continue;
        }
        let width = e.verdicts.iter().map(|v| v.impl_id.len()).max().unwrap_or(0).max(6);
        for v in &e.verdicts {
            let sheets: String = v.per_sheet.values().map(|o| outcome_char(*o)).collect();
            let _ = writeln!(
                out,
                "  {:<width$}  {}/{}  {:.2}  {}{}",
                v.impl_id,
                v.passed_sheets,
                v.total_sheets,
                v.pass_fraction(),
                sheets,
                if v.vacuous { "  (no oracle rows)" } else { "" }
            );
        }
        let fully = e.verdicts.iter().filter(|v| v.fully_correct()).count();
        let _ = writeln!(out, "  fully correct: {fully}/{}", e.verdicts.len());
        let sizes: Vec<String> = e.clusters.iter().map(|c| c.len().to_string()).collect();
        let _ = writeln!(out, "  clusters ({}): {{{}}}", e.clusters.len(), sizes.join(","));
        for c in &e.clusters {
            let _ = writeln!(out, "    {}", c.join(" "));
        }
    }
    for cmp in &report.arm_comparisons {
        out.push_str(&render_arm_comparison(cmp));
    }
    out
}

pub fn render_arm_comparison(cmp: &ArmComparison) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "\narms by {} (baseline {})", cmp.dimension, cmp.baseline);
    for a in &cmp.arms {
        let _ = writeln!(
            out,
            "  {:<12} candidates {:>3}  fully correct {:>3}  mean {:.3}  delta {:+.3}",
            a.arm, a.candidates, a.fully_correct, a.mean_pass_fraction, a.delta_vs_baseline
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    coord: Coord,
    matrix: StimulusMatrix,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub srh: Srh,
    pub report: Report,
}

/// Everything an action needs besides the script.
pub struct RunContext<'a> {
    pub runner: &'a dyn SubjectRunner,
    /// Relative paths in the script (e.g. `mockDir`) resolve against this.
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn write_file(path: &Path, data: impl AsRef<[u8]>) -> Result<(), EngineError> {
    std::fs::write(path, data).map_err(|source| EngineError::Io { path: path.display().to_string(), source })
}

fn join_dim(existing: Option<&str>, added: &str) -> String {
    match existing {
        Some(e) if !e.is_empty() => format!("{e}+{added}"),
        _ => added.to_string(),
    }
}

/// Runs a study end to end and writes the run directory. Action failures
/// end the run early and are reported in the record, not as `Err`.
pub fn run_study(script: &StudyScript, overrides: &[(String, Value)], ctx: &RunContext) -> Result<RunOutcome, EngineError> {
    let started_at_ms = unix_ms();
    let script_sha256 = hex::encode(Sha256::digest(print_study(script).as_bytes()));
    let mut script = script.clone();
    script.apply_overrides(overrides);
    let diagnostics = validate(&script);
    if !diagnostics.is_empty() {
        return Err(EngineError::Invalid(diagnostics));
    }
    let dag = build_dag(&script).expect("validated");
    std::fs::create_dir_all(&ctx.out_dir)
        .map_err(|source| EngineError::Io { path: ctx.out_dir.display().to_string(), source })?;

    let mut outputs: HashMap<String, Vec<Entry>> = HashMap::new();
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut failure: Option<ActionFailure> = None;
    for name in &dag.order {
        let action = dag.node(name).expect("dag node");
        if failure.is_some() {
            records.push(ActionRecord {
                name: name.clone(),
                action_type: action.action_type.to_string(),
                status: ActionStatus::Skipped,
                duration_ms: 0,
                error: None,
                outputs: Vec::new(),
            });
            continue;
        }
        let t0 = Instant::now();
        let result = gather_inputs(action, &outputs)
            .and_then(|inputs| run_action(&script, action, inputs, ctx, &mut warnings));
        let duration_ms = t0.elapsed().as_millis() as u64;
        match result {
            Ok(out) => {
                log::info!("action {name} completed in {duration_ms} ms");
                records.push(ActionRecord {
                    name: name.clone(),
                    action_type: action.action_type.to_string(),
                    status: ActionStatus::Completed,
                    duration_ms,
                    error: None,
                    outputs: out
                        .iter()
                        .map(|e| OutputShape {
                            coord: e.coord.clone(),
                            rows: e.matrix.table.rows.len(),
                            columns: e.matrix.table.columns.len(),
                            set_cells: e.matrix.table.set_cell_count(),
                        })
                        .collect(),
                });
                outputs.insert(name.clone(), out);
            }
            Err(f) => {
                log::error!("action {name} failed: {}", f.message);
                records.push(ActionRecord {
                    name: name.clone(),
                    action_type: action.action_type.to_string(),
                    status: ActionStatus::Failed,
                    duration_ms,
                    error: Some(f.message.clone()),
                    outputs: Vec::new(),
                });
                failure = Some(f);
            }
        }
    }

    // The hypercube holds the outputs of completed actions none of whose
    // dependents completed.
    let mut srh = Srh::new();
    for name in &dag.order {
        let Some(entries) = outputs.get(name) else { continue };
        if dag.dependents(name).any(|d| outputs.contains_key(d)) {
            continue;
        }
        for e in entries {
            let mut coord = e.coord.clone();
            if srh.entries.contains_key(&coord) {
                coord = coord.clone().with(DIM_ARM, format!("{}@{name}", coord.get(DIM_ARM).unwrap_or("")));
            }
            if srh.entries.get(&coord).is_some_and(|m| *m == e.matrix) {
                continue;
            }
            if let Err(err) = srh.insert(coord, e.matrix.clone()) {
                warnings.push(format!("hypercube: {err}"));
            }
        }
    }
    let report = build_report(&script.name, srh.entries.iter().map(|(c, m)| (c, &m.table)), DEFAULT_FLOAT_TOL);

    let record = RunRecord {
        study: script.name.clone(),
        script_sha256,
        overrides: overrides.iter().map(|(k, v)| (k.clone(), v.to_json())).collect(),
        status: if failure.is_some() { RunStatus::Failed } else { RunStatus::Completed },
        error_kind: failure.as_ref().map(|f| f.kind),
        error: failure.map(|f| f.message),
        started_at_ms,
        finished_at_ms: unix_ms(),
        actions: records,
        warnings,
    };
    let out = &ctx.out_dir;
    write_file(&out.join("srh.jsonl"), export_long(srh.entries.iter().map(|(c, m)| (c, &m.table)), ExportFormat::Jsonl))?;
    write_file(&out.join("srh.csv"), export_long(srh.entries.iter().map(|(c, m)| (c, &m.table)), ExportFormat::Csv))?;
    write_file(&out.join("report.json"), serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    write_file(&out.join("report.txt"), render_report_text(&report))?;
    write_file(&out.join("run.json"), serde_json::to_string_pretty(&record).expect("record serializes") + "\n")?;
    Ok(RunOutcome { record, srh, report })
}

/// Union of the direct dependencies' outputs. The same coordinate arriving
/// twice must carry the same matrix.
fn gather_inputs(action: &ActionDecl, outputs: &HashMap<String, Vec<Entry>>) -> Result<Vec<Entry>, ActionFailure> {
    let mut out: Vec<Entry> = Vec::new();
    for dep in &action.depends_on {
        for e in outputs.get(dep).into_iter().flatten() {
            match out.iter().find(|o| o.coord == e.coord) {
                Some(o) if o.matrix == e.matrix => {}
                Some(_) => {
                    return Err(fail(ErrorKind::ConflictingInputs, format!("inputs disagree on matrix at {}", e.coord)))
                }
                None => out.push(e.clone()),
            }
        }
    }
    Ok(out)
}

/// Splits inputs into those the include patterns select and the rest.
fn select(action: &ActionDecl, inputs: Vec<Entry>, warnings: &mut Vec<String>) -> (Vec<Entry>, Vec<Entry>) {
    let ids: Vec<String> = inputs.iter().filter_map(|e| e.coord.get(DIM_MATRIX).map(str::to_string)).collect();
    let (matched, warning) = include_filter(&action.include, ids.iter().map(String::as_str));
    if let Some(w) = warning {
        warnings.push(format!("action `{}`: {w}", action.name));
    }
    inputs.into_iter().partition(|e| e.coord.get(DIM_MATRIX).is_some_and(|id| matched.iter().any(|m| m == id)))
}

fn run_action(
    script: &StudyScript,
    action: &ActionDecl,
    inputs: Vec<Entry>,
    ctx: &RunContext,
    warnings: &mut Vec<String>,
) -> Result<Vec<Entry>, ActionFailure> {
    let profile = action.profile.as_deref().and_then(|p| script.profile(p)).cloned().unwrap_or_default();
    match action.action_type {
        ActionType::Create => {
            let mut out = inputs;
            for decl in &action.matrices {
                let sig = decl.signature().map_err(|e| fail(ErrorKind::Store, e.to_string()))?;
                let m = StimulusMatrix::new(decl.id.clone(), sig, decl.sheets.to_vec())
                    .map_err(|e| fail(ErrorKind::Store, e.to_string()))?;
                let coord = Coord::new([
                    (DIM_STUDY, script.name.as_str()),
                    (DIM_ARM, ""),
                    (DIM_MATRIX, decl.id.as_str()),
                    (DIM_MODEL, ""),
                    (DIM_PROMPT, ""),
                ]);
                if out.iter().any(|e| e.coord == coord) {
                    return Err(fail(ErrorKind::ConflictingInputs, format!("matrix `{}` already exists", decl.id)));
                }
                out.push(Entry { coord, matrix: m });
            }
            Ok(out)
        }
        ActionType::Generate => {
            let cfg = ProviderConfig::from_action(script, action)
                .map_err(|e| fail(ErrorKind::GenerationFailed, e.to_string()))?
                .resolve_paths(&ctx.base_dir);
            let (matched, mut out) = select(action, inputs, warnings);
            let candidates_dir = ctx.out_dir.join("candidates");
            for e in matched {
                for prompt in &action.prompts {
                    let text = render_prompt(prompt, &e.matrix).map_err(|err| fail(ErrorKind::GenerationFailed, err.to_string()))?;
                    let prefix = if action.prompts.len() > 1 {
                        format!("{}.{}", action.name, prompt.id)
                    } else {
                        action.name.clone()
                    };
                    let generated = generate_candidates(&cfg, &text, &prompt.id, &e.matrix.id, &prefix).map_err(|err| {
                        let kind = if err.is_unavailable() { ErrorKind::ProviderUnavailable } else { ErrorKind::GenerationFailed };
                        fail(kind, err.to_string())
                    })?;
                    std::fs::create_dir_all(&candidates_dir).map_err(|err| fail(ErrorKind::Io, err.to_string()))?;
                    let mut impls: Vec<Implementation> = Vec::with_capacity(generated.len());
                    for c in generated {
                        if c.load_error.is_some() {
                            log::warn!("{}: {}", c.impl_id, c.load_error.as_deref().unwrap_or_default());
                        }
                        let path = candidates_dir.join(format!("{}.py", c.impl_id));
                        std::fs::write(&path, &c.source_text).map_err(|err| fail(ErrorKind::Io, format!("{}: {err}", path.display())))?;
                        let mut imp = Implementation::from(c);
                        if let Some(image) = &profile.image {
                            imp.provenance.insert("image".into(), image.clone());
                        }
                        impls.push(imp);
                    }
                    let mut matrix = e.matrix.clone();
                    matrix.add_implementations(impls).map_err(|err| fail(ErrorKind::Store, err.to_string()))?;
                    let coord = e
                        .coord
                        .clone()
                        .with(DIM_ARM, join_dim(e.coord.get(DIM_ARM), &action.name))
                        .with(DIM_MODEL, join_dim(e.coord.get(DIM_MODEL), &cfg.model))
                        .with(DIM_PROMPT, join_dim(e.coord.get(DIM_PROMPT), &prompt.id));
                    out.push(Entry { coord, matrix });
                }
            }
            Ok(out)
        }
        ActionType::Arena => {
            let (matched, mut out) = select(action, inputs, warnings);
            if matched.is_empty() {
                return Err(fail(ErrorKind::ActionPreconditionFailed, "no matrices to execute"));
            }
            let timeout_ms = match script.config_value(action, "timeoutMs") {
                Some(Value::Int(t)) if t > 0 => t as u64,
                _ => DEFAULT_TIMEOUT_MS,
            };
            let threads = match script.config_value(action, "parallelism") {
                Some(Value::Int(n)) if n > 0 => n as usize,
                _ => available_threads(),
            };
            let opts = ArenaOptions { timeout_ms, parallelism: Parallelism::from_threads(threads) };
            for e in matched {
                let matrix = execute_matrix(&e.matrix, ctx.runner, &profile, opts).map_err(|err| match err {
                    ArenaError::ActionPreconditionFailed(m) => fail(ErrorKind::ActionPreconditionFailed, m),
                    ArenaError::RunnerUnavailable(u) => fail(ErrorKind::RunnerUnavailable, u.to_string()),
                    ArenaError::Srm(s) => fail(ErrorKind::Store, s.to_string()),
                })?;
                out.push(Entry { coord: e.coord, matrix });
            }
            Ok(out)
        }
        ActionType::Analyze => {
            let tol = match script.config_value(action, "tolerance") {
                Some(Value::Float(t)) => t,
                _ => DEFAULT_FLOAT_TOL,
            };
            let (matched, _) = select(action, inputs.clone(), warnings);
            for e in &matched {
                let vs = verdicts(&e.matrix.table, tol).map_err(|err| fail(ErrorKind::IncompleteMatrix, err.to_string()))?;
                let passed = vs.iter().filter(|v| v.fully_correct()).count();
                log::info!("{}: {passed}/{} candidates fully correct", e.coord, vs.len());
            }
            Ok(inputs)
        }
        ActionType::Export => {
            let format = match script.config_value(action, "format") {
                Some(Value::Str(f)) if f == "jsonl" => ExportFormat::Jsonl,
                _ => ExportFormat::Csv,
            };
            let (matched, _) = select(action, inputs.clone(), warnings);
            let ext = if format == ExportFormat::Csv { "csv" } else { "jsonl" };
            let path = ctx.out_dir.join(format!("export-{}.{ext}", action.name));
            let mut sorted: Vec<&Entry> = matched.iter().collect();
            sorted.sort_by(|a, b| a.coord.cmp(&b.coord));
            let data = export_long(sorted.iter().map(|e| (&e.coord, &e.matrix.table)), format);
            std::fs::write(&path, data).map_err(|err| fail(ErrorKind::Io, format!("{}: {err}", path.display())))?;
            Ok(inputs)
        }
    }
}

/// Parses `key=value`; the value is read as a script literal when it parses
/// as one, else taken as a plain string.
pub fn parse_override(text: &str) -> Option<(String, Value)> {
    let (key, raw) = text.split_once('=')?;
    let key = key.trim();
    if key.is_empty() {
        return None;
    }
    let value = crate::syntax::parse_value(raw.trim()).unwrap_or_else(|_| Value::Str(raw.trim().to_string()));
    Some((key.to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::FakeRunner;
    use crate::pipeline::parse_study;

    const STUDY: &str = include_str!("../../../studies/base64/study.tdse");

    fn study_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../studies/base64")
    }

    fn fake() -> FakeRunner {
        FakeRunner::from_path(&study_dir().join("fake_runner.json")).unwrap()
    }

    fn mock() -> Vec<(String, Value)> {
        vec![("provider".into(), Value::Str("mock".into()))]
    }

    fn run(script: &StudyScript, overrides: &[(String, Value)], out: &Path) -> RunOutcome {
        let runner = fake();
        let ctx = RunContext { runner: &runner, base_dir: study_dir(), out_dir: out.to_path_buf() };
        run_study(script, overrides, &ctx).unwrap()
    }

    #[test]
    fn include_patterns() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(include_filter(&s(&["base64"]), ["base64"]), (s(&["base64"]), None));
        assert_eq!(include_filter(&s(&["*"]), ["a", "b"]).0, s(&["a", "b"]));
        let (ids, warning) = include_filter(&s(&["enc*"]), ["base64"]);
        assert!(ids.is_empty() && warning.is_some());
        assert_eq!(include_filter(&[], ["b", "a", "b"]).0, s(&["b", "a"]));
        assert_eq!(include_filter(&s(&["b?se64", "[bad"]), ["base64", "[bad"]).0, s(&["base64", "[bad"]));
    }

    #[test]
    fn overrides_parse_as_literals() {
        assert_eq!(parse_override("samples=2"), Some(("samples".into(), Value::Int(2))));
        assert_eq!(parse_override("provider=mock"), Some(("provider".into(), Value::Str("mock".into()))));
        assert_eq!(parse_override("model=\"x\""), Some(("model".into(), Value::Str("x".into()))));
        assert_eq!(parse_override("nokey"), None);
    }

    #[test]
    fn offline_base64_run() {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&parse_study(STUDY).unwrap(), &mock(), dir.path());
        assert_eq!(out.record.status, RunStatus::Completed, "{:?}", out.record);
        assert!(out.record.actions.iter().all(|a| a.status == ActionStatus::Completed));
        assert_eq!(out.srh.len(), 1);
        let (coord, m) = out.srh.entries.iter().next().unwrap();
        assert_eq!(coord.get(DIM_ARM), Some("generate"));
        assert_eq!(coord.get(DIM_MODEL), Some("gpt-4o-mini"));
        assert_eq!(m.shape(), (4, 6));
        let fractions: Vec<f64> = out.report.entries[0].verdicts.iter().map(Verdict::pass_fraction).collect();
        assert_eq!(fractions, [1.0, 1.0, 1.0, 0.5, 0.0]);
        for f in ["run.json", "srh.jsonl", "srh.csv", "report.json", "report.txt", "candidates/generate-base64-s1.py"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
    }

    #[test]
    fn fewer_samples() {
        let dir = tempfile::tempdir().unwrap();
        let mut o = mock();
        o.push(("samples".into(), Value::Int(2)));
        let out = run(&parse_study(STUDY).unwrap(), &o, dir.path());
        assert_eq!(out.srh.entries.values().next().unwrap().shape(), (4, 3));
        assert_eq!(out.record.overrides["samples"], serde_json::json!(2));
    }

    #[test]
    fn arena_without_generate_fails() {
        let text = STUDY.replace("dependsOn \"generate\"", "dependsOn \"create\"");
        let dir = tempfile::tempdir().unwrap();
        let out = run(&parse_study(&text).unwrap(), &mock(), dir.path());
        assert_eq!(out.record.status, RunStatus::Failed);
        assert_eq!(out.record.error_kind, Some(ErrorKind::ActionPreconditionFailed));
        let statuses: Vec<_> = out.record.actions.iter().map(|a| (a.name.as_str(), a.status)).collect();
        assert!(statuses.contains(&("execute", ActionStatus::Failed)));
        // Partial results are still written.
        let saved: RunRecord = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
        assert_eq!(saved.status, RunStatus::Failed);
    }

    #[test]
    fn two_arms_feed_one_arena() {
        let second = "  action \"generate2\" type = GenerateCodeMock {\n    dependsOn \"create\"\n    include \"base64\"\n    mockDir = \"candidates\"\n    samples = 2\n    model = \"gpt-4o-mini\"\n    prompt \"lql_prompt\" \"\"\"{{lql}}\"\"\"\n  }\n";
        let text = STUDY
            .replace("  action \"execute\"", &format!("{second}\n  action \"execute\""))
            .replace("dependsOn \"generate\"", "dependsOn \"generate\", \"generate2\"");
        let script = parse_study(&text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run(&script, &mock(), dir.path());
        assert_eq!(out.record.status, RunStatus::Completed, "{:?}", out.record.error);
        let arms: Vec<_> = out.srh.entries.keys().map(|c| c.get(DIM_ARM).unwrap().to_string()).collect();
        assert_eq!(arms, ["generate", "generate2"]);
        let coords: Vec<_> = out.srh.entries.keys().collect();
        assert_eq!(coords[0].without(DIM_ARM), coords[1].without(DIM_ARM));
        let cmp = &out.report.arm_comparisons[0];
        assert_eq!(cmp.arms.iter().map(|a| a.candidates).collect::<Vec<_>>(), [5, 2]);
        assert!((cmp.arms[0].mean_pass_fraction - 0.7).abs() < 1e-12);
        assert!((cmp.arms[1].mean_pass_fraction - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_scripts_are_rejected() {
        let text = STUDY.replacen("profile \"python3\"\n", "profile \"missing\"\n", 1);
        let runner = fake();
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext { runner: &runner, base_dir: study_dir(), out_dir: dir.path().into() };
        assert!(matches!(run_study(&parse_study(&text).unwrap(), &mock(), &ctx), Err(EngineError::Invalid(_))));
    }

    #[test]
    fn analyze_and_export_actions() {
        let extra = "  action \"analyze\" type = Analyze {\n    dependsOn \"execute\"\n  }\n  action \"dump\" type = Export {\n    dependsOn \"analyze\"\n    format = \"jsonl\"\n  }\n}\n";
        let text = format!("{}{extra}", STUDY.trim_end().strip_suffix('}').unwrap());
        let dir = tempfile::tempdir().unwrap();
        let out = run(&parse_study(&text).unwrap(), &mock(), dir.path());
        assert_eq!(out.record.status, RunStatus::Completed, "{:?}", out.record.error);
        let dump = std::fs::read_to_string(dir.path().join("export-dump.jsonl")).unwrap();
        assert_eq!(dump.lines().count(), 22);
        assert_eq!(dump.as_bytes(), std::fs::read(dir.path().join("srh.jsonl")).unwrap());
    }
}
