//! Study scripts: parsing, validation and the derived action DAG.
//!
//! ```text
//! study   := ["dataSource" STRING] "study" STRING "{" (global|profile|action)* "}"
//! global  := "let" IDENT "=" value
//! profile := "profile" STRING "{" ("scope" IDENT | "image" "=" STRING | "interpreter" "=" STRING)* "}"
//! action  := "action" STRING "type" "=" IDENT "{" entry* "}"
//! entry   := "dependsOn" STRING ("," STRING)* | "include" STRING ("," STRING)* | "profile" STRING
//!          | IDENT "=" (value | IDENT) | matrix | "prompt" [STRING] TRIPLESTRING
//! matrix  := "matrix" STRING "{" "lql" TRIPLESTRING test* "}"
//! test    := "test" STRING "(" [IDENT "=" value ("," IDENT "=" value)*] ")" "{" row+ "}"
//! ```
//!
//! A bare identifier on the right of a config entry refers to a global.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::{self, Write as _};

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use crate::generate::{PromptTemplate, ProviderConfig};
use crate::lql::{parse_lql, InterfaceSignature};
use crate::ssn::{self, Expected, Input, SequenceSheet, SheetError, Target};
use crate::syntax::{Cursor, SyntaxError, Tok};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Profile {
    pub name: String,
    pub scope: Option<String>,
    pub image: Option<String>,
    pub interpreter: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionType {
    Create,
    Generate,
    Arena,
    Analyze,
    Export,
}

impl ActionType {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionType::Create => "create",
            ActionType::Generate => "generate",
            ActionType::Arena => "arena",
            ActionType::Analyze => "analyze",
            ActionType::Export => "export",
        }
    }

    /// Maps a declared type name to an action type, plus the provider it
    /// implies (`GenerateCodeOllama` is a generate action talking to ollama).
    pub fn normalize(declared: &str) -> Option<(ActionType, Option<&'static str>)> {
        Some(match declared.to_ascii_lowercase().as_str() {
            "create" => (ActionType::Create, None),
            "generate" | "generatecode" => (ActionType::Generate, None),
            "generatecodeopenai" => (ActionType::Generate, Some("openai")),
            "generatecodeollama" => (ActionType::Generate, Some("ollama")),
            "generatecodemock" => (ActionType::Generate, Some("mock")),
            "arena" | "execute" => (ActionType::Arena, None),
            "analyze" => (ActionType::Analyze, None),
            "export" => (ActionType::Export, None),
            _ => return None,
        })
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigValue {
    Literal(Value),
    Global(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixDecl {
    pub id: String,
    pub lql: String,
    pub sheets: Vec<SequenceSheet>,
}

impl MatrixDecl {
    pub fn signature(&self) -> Result<InterfaceSignature, crate::lql::LqlError> {
        parse_lql(&self.lql)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDecl {
    pub name: String,
    pub declared_type: String,
    pub action_type: ActionType,
    pub depends_on: Vec<String>,
    pub include: Vec<String>,
    pub profile: Option<String>,
    pub config: BTreeMap<String, ConfigValue>,
    pub prompts: Vec<PromptTemplate>,
    pub matrices: Vec<MatrixDecl>,
}

impl ActionDecl {
    pub fn implied_provider(&self) -> Option<&'static str> {
        ActionType::normalize(&self.declared_type).and_then(|(_, p)| p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyScript {
    pub data_source: Option<String>,
    pub name: String,
    pub globals: IndexMap<String, Value>,
    pub profiles: Vec<Profile>,
    pub actions: Vec<ActionDecl>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StudyError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("matrix `{matrix}` test `{test}`: {source}")]
    Sheet { matrix: String, test: String, source: SheetError },
    #[error("action `{0}` is declared more than once")]
    DuplicateActionName(String),
    #[error("profile `{0}` is declared more than once")]
    DuplicateProfileName(String),
    #[error("action `{action}` has unknown type `{declared}`")]
    UnknownActionType { action: String, declared: String },
    #[error("study declares no actions")]
    NoActions,
}

impl StudyScript {
    pub fn action(&self, name: &str) -> Option<&ActionDecl> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn profile(&self, name: &str) -> Option<&Profile> {
        self.profiles.iter().find(|p| p.name == name)
    }

    /// Action config first (following global references), then a global of
    /// the same name.
    pub fn config_value(&self, action: &ActionDecl, key: &str) -> Option<Value> {
        match action.config.get(key) {
            Some(ConfigValue::Literal(v)) => Some(v.clone()),
            Some(ConfigValue::Global(g)) => self.globals.get(g).cloned(),
            None => self.globals.get(key).cloned(),
        }
    }

    /// Applies `--set` overrides. `key=value` replaces (or adds) a global;
    /// `action.key=value` replaces one action's config entry.
    pub fn apply_overrides(&mut self, overrides: &[(String, Value)]) {
        for (key, value) in overrides {
            match key.split_once('.') {
                Some((action, entry)) if self.action(action).is_some() => {
                    let decl = self.actions.iter_mut().find(|a| a.name == action).expect("checked");
                    decl.config.insert(entry.to_string(), ConfigValue::Literal(value.clone()));
                }
                _ => {
                    self.globals.insert(key.clone(), value.clone());
                }
            }
        }
    }

    pub fn matrix_ids(&self) -> Vec<&str> {
        self.actions.iter().flat_map(|a| a.matrices.iter().map(|m| m.id.as_str())).collect()
    }
}

pub fn parse_study(text: &str) -> Result<StudyScript, StudyError> {
    let mut cur = Cursor::new(text)?;
    let mut data_source = None;
    if cur.is_keyword("dataSource") {
        cur.bump();
        data_source = Some(cur.expect_string()?);
    }
    cur.expect_keyword("study")?;
    let name = cur.expect_string()?;
    cur.expect_punct('{')?;
    let mut script =
        StudyScript { data_source, name, globals: IndexMap::new(), profiles: Vec::new(), actions: Vec::new() };
    loop {
        match &cur.peek().tok {
            Tok::Punct('}') => {
                cur.bump();
                break;
            }
            Tok::Ident(kw) if kw == "let" => {
                cur.bump();
                let key = cur.expect_ident()?;
                cur.expect_punct('=')?;
                let v = cur.value()?;
                script.globals.insert(key, v);
            }
            Tok::Ident(kw) if kw == "profile" => {
                let p = parse_profile(&mut cur)?;
                if script.profile(&p.name).is_some() {
                    return Err(StudyError::DuplicateProfileName(p.name));
                }
                script.profiles.push(p);
            }
            Tok::Ident(kw) if kw == "action" => {
                let a = parse_action(&mut cur)?;
                if script.action(&a.name).is_some() {
                    return Err(StudyError::DuplicateActionName(a.name));
                }
                script.actions.push(a);
            }
            _ => return Err(cur.unexpected("`let`, `profile`, `action` or `}`").into()),
        }
    }
    if !cur.at_eof() {
        return Err(cur.unexpected("end of input").into());
    }
    if script.actions.is_empty() {
        return Err(StudyError::NoActions);
    }
    Ok(script)
}

fn parse_profile(cur: &mut Cursor) -> Result<Profile, StudyError> {
    cur.expect_keyword("profile")?;
    let mut p = Profile { name: cur.expect_string()?, ..Profile::default() };
    cur.expect_punct('{')?;
    while !cur.eat_punct('}') {
        let key = cur.expect_ident()?;
        match key.as_str() {
            "scope" => p.scope = Some(cur.expect_ident()?),
            "image" => {
                cur.expect_punct('=')?;
                p.image = Some(cur.expect_string()?);
            }
            "interpreter" => {
                cur.expect_punct('=')?;
                p.interpreter = Some(cur.expect_string()?);
            }
            other => return Err(cur.error(format!("unknown profile entry `{other}`")).into()),
        }
    }
    Ok(p)
}

fn string_list(cur: &mut Cursor) -> Result<Vec<String>, SyntaxError> {
    let mut out = vec![cur.expect_string()?];
    while cur.eat_punct(',') {
        out.push(cur.expect_string()?);
    }
    Ok(out)
}

fn parse_action(cur: &mut Cursor) -> Result<ActionDecl, StudyError> {
    cur.expect_keyword("action")?;
    let name = cur.expect_string()?;
    cur.expect_keyword("type")?;
    cur.expect_punct('=')?;
    let declared_type = cur.expect_ident()?;
    let (action_type, _) = ActionType::normalize(&declared_type)
        .ok_or_else(|| StudyError::UnknownActionType { action: name.clone(), declared: declared_type.clone() })?;
    let mut action = ActionDecl {
        name,
        declared_type,
        action_type,
        depends_on: Vec::new(),
        include: Vec::new(),
        profile: None,
        config: BTreeMap::new(),
        prompts: Vec::new(),
        matrices: Vec::new(),
    };
    cur.expect_punct('{')?;
    while !cur.eat_punct('}') {
        let key_pos = cur.pos();
        let key = cur.expect_ident()?;
        match key.as_str() {
            "dependsOn" => action.depends_on.extend(string_list(cur)?),
            "include" => action.include.extend(string_list(cur)?),
            "profile" if !cur.is_punct('=') => action.profile = Some(cur.expect_string()?),
            "prompt" if !cur.is_punct('=') => {
                let id = if matches!(cur.peek().tok, Tok::Str(_)) {
                    cur.expect_string()?
                } else {
                    format!("prompt{}", action.prompts.len() + 1)
                };
                let body = cur.expect_triple_string()?;
                action.prompts.push(PromptTemplate { id, body });
            }
            "matrix" if !cur.is_punct('=') => action.matrices.push(parse_matrix(cur)?),
            _ => {
                cur.expect_punct('=')?;
                let v = match &cur.peek().tok {
                    Tok::Ident(g) if !cur.at_value() => {
                        let g = g.clone();
                        cur.bump();
                        ConfigValue::Global(g)
                    }
                    _ => ConfigValue::Literal(cur.value()?),
                };
                if action.config.insert(key.clone(), v).is_some() {
                    return Err(SyntaxError::new(key_pos, format!("config key `{key}` is set twice")).into());
                }
            }
        }
    }
    Ok(action)
}

fn parse_matrix(cur: &mut Cursor) -> Result<MatrixDecl, StudyError> {
    let id = cur.expect_string()?;
    cur.expect_punct('{')?;
    cur.expect_keyword("lql")?;
    let lql = cur.expect_triple_string()?;
    let mut sheets = Vec::new();
    while cur.is_keyword("test") {
        cur.bump();
        let test = cur.expect_string()?;
        cur.expect_punct('(')?;
        let mut params = BTreeMap::new();
        if !cur.eat_punct(')') {
            loop {
                let p_pos = cur.pos();
                let p = cur.expect_ident()?;
                cur.expect_punct('=')?;
                let v = cur.value()?;
                if params.insert(p.clone(), v).is_some() {
                    return Err(SyntaxError::new(p_pos, format!("parameter `{p}` is bound twice")).into());
                }
                if cur.eat_punct(')') {
                    break;
                }
                cur.expect_punct(',')?;
            }
        }
        cur.expect_punct('{')?;
        let sheet_err = |source| StudyError::Sheet { matrix: id.clone(), test: test.clone(), source };
        let rows = ssn::parse_rows(cur).map_err(sheet_err)?;
        cur.expect_punct('}')?;
        sheets.push(SequenceSheet::new(test.clone(), params, rows).map_err(sheet_err)?);
    }
    cur.expect_punct('}')?;
    Ok(MatrixDecl { id, lql, sheets })
}

fn literal(v: &Value) -> String {
    match v {
        Value::Bytes(b) => format!("b\"{}\"", crate::value::encode_base64(b)),
        Value::List(items) => format!("[{}]", items.iter().map(literal).collect::<Vec<_>>().join(", ")),
        Value::Map(m) => format!(
            "{{{}}}",
            m.iter().map(|(k, v)| format!("{}: {}", quote(k), literal(v))).collect::<Vec<_>>().join(", ")
        ),
        other => other.to_json_string(),
    }
}

fn quote(s: &str) -> String {
    serde_json::Value::String(s.to_string()).to_string()
}

/// Debug renderer emitting the script grammar; `parse_study(&print_study(s)) == s`.
pub fn print_study(s: &StudyScript) -> String {
    let mut out = String::new();
    if let Some(ds) = &s.data_source {
        let _ = writeln!(out, "dataSource {}", quote(ds));
    }
    let _ = writeln!(out, "study {} {{", quote(&s.name));
    for (k, v) in &s.globals {
        let _ = writeln!(out, "  let {k} = {}", literal(v));
    }
    for p in &s.profiles {
        let _ = writeln!(out, "  profile {} {{", quote(&p.name));
        if let Some(scope) = &p.scope {
            let _ = writeln!(out, "    scope {scope}");
        }
        if let Some(image) = &p.image {
            let _ = writeln!(out, "    image = {}", quote(image));
        }
        if let Some(interp) = &p.interpreter {
            let _ = writeln!(out, "    interpreter = {}", quote(interp));
        }
        out.push_str("  }\n");
    }
    for a in &s.actions {
        let _ = writeln!(out, "  action {} type = {} {{", quote(&a.name), a.declared_type);
        if !a.depends_on.is_empty() {
            let deps: Vec<_> = a.depends_on.iter().map(|d| quote(d)).collect();
            let _ = writeln!(out, "    dependsOn {}", deps.join(", "));
        }
        for inc in &a.include {
            let _ = writeln!(out, "    include {}", quote(inc));
        }
        if let Some(p) = &a.profile {
            let _ = writeln!(out, "    profile {}", quote(p));
        }
        for (k, v) in &a.config {
            let rhs = match v {
                ConfigValue::Literal(v) => literal(v),
                ConfigValue::Global(g) => g.clone(),
            };
            let _ = writeln!(out, "    {k} = {rhs}");
        }
        for p in &a.prompts {
            let _ = writeln!(out, "    prompt {} \"\"\"{}\"\"\"", quote(&p.id), p.body);
        }
        for m in &a.matrices {
            let _ = writeln!(out, "    matrix {} {{\n      lql \"\"\"{}\"\"\"", quote(&m.id), m.lql);
            for sheet in &m.sheets {
                let params: Vec<_> = sheet.parameters.iter().map(|(k, v)| format!("{k} = {}", literal(v))).collect();
                let _ = writeln!(out, "      test {} ({}) {{", quote(&sheet.name), params.join(", "));
                for row in &sheet.rows {
                    let mut cells = vec![
                        match &row.expected {
                            Expected::Absent => "_".to_string(),
                            Expected::Placeholder(p) => format!("?{p}"),
                            Expected::Literal(v) => literal(v),
                        },
                        row.operation.clone(),
                        match &row.target {
                            Target::Type(t) if crate::syntax::is_ident(t) => t.clone(),
                            Target::Type(t) => quote(t),
                            Target::Cell(c) => c.to_string(),
                        },
                    ];
                    cells.extend(row.inputs.iter().map(|i| match i {
                        Input::Literal(v) => literal(v),
                        Input::Cell(c) => c.to_string(),
                        Input::Placeholder(p) => format!("?{p}"),
                    }));
                    let _ = writeln!(out, "        row {}", cells.join(", "));
                }
                out.push_str("      }\n");
            }
            out.push_str("    }\n");
        }
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("dependency cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("action `{action}` depends on undeclared action `{missing}`")]
    DanglingDependency { action: String, missing: String },
}

/// Immutable action graph. Edges point from a dependency to its dependent.
#[derive(Debug, Clone)]
pub struct ActionDag {
    pub nodes: Vec<ActionDecl>,
    pub edges: Vec<(String, String)>,
    pub order: Vec<String>,
}

pub fn build_dag(script: &StudyScript) -> Result<ActionDag, DagError> {
    let index: HashMap<&str, usize> = script.actions.iter().enumerate().map(|(i, a)| (a.name.as_str(), i)).collect();
    let n = script.actions.len();
    let mut edges = Vec::new();
    let mut indegree = vec![0usize; n];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, a) in script.actions.iter().enumerate() {
        let mut seen = HashSet::new();
        for dep in &a.depends_on {
            let &d = index
                .get(dep.as_str())
                .ok_or_else(|| DagError::DanglingDependency { action: a.name.clone(), missing: dep.clone() })?;
            if !seen.insert(d) {
                continue;
            }
            edges.push((dep.clone(), a.name.clone()));
            indegree[i] += 1;
            dependents[d].push(i);
        }
    }
    // Kahn's algorithm; the ready set is ordered by declaration index.
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &j in &dependents[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.insert(j);
            }
        }
    }
    if order.len() < n {
        return Err(DagError::CycleDetected(find_cycle(script, &index, &indegree)));
    }
    Ok(ActionDag {
        nodes: script.actions.clone(),
        edges,
        order: order.into_iter().map(|i| script.actions[i].name.clone()).collect(),
    })
}

/// Walks dependencies among the nodes Kahn could not schedule until a node
/// repeats, then returns that loop closed on itself (e.g. `[A, B, A]`).
fn find_cycle(script: &StudyScript, index: &HashMap<&str, usize>, indegree: &[usize]) -> Vec<String> {
    let start = (0..indegree.len()).find(|&i| indegree[i] > 0).expect("a blocked node exists");
    let mut path = vec![start];
    let mut at = start;
    loop {
        let next = script.actions[at]
            .depends_on
            .iter()
            .map(|d| index[d.as_str()])
            .find(|&d| indegree[d] > 0)
            .expect("blocked node has a blocked dependency");
        if let Some(pos) = path.iter().position(|&p| p == next) {
            let mut cycle: Vec<usize> = path[pos..].to_vec();
            // Report in dependency-flow order, starting from the earliest declared node.
            cycle.reverse();
            let min = cycle.iter().enumerate().min_by_key(|(_, &v)| v).map(|(i, _)| i).unwrap_or(0);
            cycle.rotate_left(min);
            cycle.push(cycle[0]);
            return cycle.into_iter().map(|i| script.actions[i].name.clone()).collect();
        }
        path.push(next);
        at = next;
    }
}

impl ActionDag {
    pub fn node(&self, name: &str) -> Option<&ActionDecl> {
        self.nodes.iter().find(|a| a.name == name)
    }

    pub fn dependents<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges.iter().filter(move |(from, _)| from == name).map(|(_, to)| to.as_str())
    }

    /// Every transitive dependency of `name`.
    pub fn ancestors(&self, name: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![name.to_string()];
        while let Some(n) = stack.pop() {
            for (from, to) in &self.edges {
                if *to == n && out.insert(from.clone()) {
                    stack.push(from.clone());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DiagnosticKind {
    UnknownProfile,
    DanglingDependency,
    CycleDetected,
    IncludeMatchesNothing,
    MissingPrompt,
    UnknownPlaceholder,
    ProviderConfig,
    UnknownGlobal,
    InvalidLql,
    DuplicateMatrix,
    UnknownOperation,
    ArityMismatch,
    UnboundPlaceholder,
    InvalidConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub action: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.action {
            Some(a) => write!(f, "{:?} [action {a}]: {}", self.kind, self.message),
            None => write!(f, "{:?}: {}", self.kind, self.message),
        }
    }
}

/// Static checks; an empty result means the script is runnable.
pub fn validate(script: &StudyScript) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |kind, action: Option<&str>, message: String| {
        out.push(Diagnostic { kind, action: action.map(str::to_string), message })
    };
    if let Err(e) = build_dag(script) {
        let kind = match e {
            DagError::CycleDetected(_) => DiagnosticKind::CycleDetected,
            DagError::DanglingDependency { .. } => DiagnosticKind::DanglingDependency,
        };
        push(kind, None, e.to_string());
    }
    let all_ids = script.matrix_ids();
    let mut seen_ids = HashSet::new();
    for id in &all_ids {
        if !seen_ids.insert(*id) {
            push(DiagnosticKind::DuplicateMatrix, None, format!("matrix `{id}` is declared more than once"));
        }
    }
    for a in &script.actions {
        let name = Some(a.name.as_str());
        if let Some(p) = &a.profile {
            if script.profile(p).is_none() {
                push(DiagnosticKind::UnknownProfile, name, format!("profile `{p}` is not declared"));
            }
        }
        for (k, v) in &a.config {
            if let ConfigValue::Global(g) = v {
                if !script.globals.contains_key(g) {
                    push(DiagnosticKind::UnknownGlobal, name, format!("`{k}` refers to undeclared global `{g}`"));
                }
            }
        }
        if !all_ids.is_empty() {
            for pattern in &a.include {
                if crate::engine::include_filter(std::slice::from_ref(pattern), all_ids.iter().copied()).0.is_empty() {
                    push(DiagnosticKind::IncludeMatchesNothing, name, format!("include `{pattern}` matches no matrix"));
                }
            }
        }
        match a.action_type {
            ActionType::Generate => {
                if a.prompts.is_empty() {
                    push(DiagnosticKind::MissingPrompt, name, "generate action has no prompt".into());
                }
                for p in &a.prompts {
                    if let Err(e) = p.check() {
                        push(DiagnosticKind::UnknownPlaceholder, name, e.to_string());
                    }
                }
                if let Err(e) = ProviderConfig::from_action(script, a) {
                    push(DiagnosticKind::ProviderConfig, name, e.to_string());
                }
            }
            ActionType::Arena => {
                if let Some(v) = script.config_value(a, "timeoutMs") {
                    if !matches!(v, Value::Int(t) if t > 0) {
                        push(DiagnosticKind::InvalidConfig, name, format!("timeoutMs must be a positive integer, found {v}"));
                    }
                }
            }
            ActionType::Export => {
                if let Some(v) = script.config_value(a, "format") {
                    if !matches!(&v, Value::Str(f) if f == "csv" || f == "jsonl") {
                        push(DiagnosticKind::InvalidConfig, name, format!("format must be \"csv\" or \"jsonl\", found {v}"));
                    }
                }
            }
            _ => {}
        }
        for m in &a.matrices {
            let sig = match m.signature() {
                Ok(sig) => sig,
                Err(e) => {
                    push(DiagnosticKind::InvalidLql, name, format!("matrix `{}`: {e}", m.id));
                    continue;
                }
            };
            for sheet in &m.sheets {
                if let Err(e) = ssn::resolve(sheet, &sig, 1) {
                    let kind = match e {
                        ssn::ResolveError::UnknownOperation { .. } => DiagnosticKind::UnknownOperation,
                        ssn::ResolveError::ArityMismatch { .. } => DiagnosticKind::ArityMismatch,
                        ssn::ResolveError::UnboundPlaceholder { .. } => DiagnosticKind::UnboundPlaceholder,
                    };
                    push(kind, name, format!("matrix `{}`: {e}", m.id));
                }
            }
        }
    }
    out
}
