//! Sequence sheets: tabular tests bound to an interface signature.
//!
//! A row is `expected, operation, target, input...`. The expected cell is `_`
//! (no oracle), `?pN` (oracle = parameter pN) or a literal. `create` rows name
//! a type as target; every other row targets an earlier result via `A<row>`.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value as Json;
use thiserror::Error;

use crate::lql::{render_lql, InterfaceSignature};
use crate::syntax::{is_cell_ref, Cursor, SyntaxError, Tok};
use crate::value::{Value, REF_TAG};

pub const CREATE: &str = "create";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellRef {
    pub row: usize,
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}", self.row)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expected {
    Absent,
    Placeholder(String),
    Literal(Value),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Type(String),
    Cell(CellRef),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Type(t) => f.write_str(t),
            Target::Cell(c) => c.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Literal(Value),
    Cell(CellRef),
    Placeholder(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SheetRow {
    pub expected: Expected,
    pub operation: String,
    pub target: Target,
    pub inputs: Vec<Input>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSheet {
    pub name: String,
    pub parameters: BTreeMap<String, Value>,
    pub rows: Vec<SheetRow>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SheetError {
    #[error("row {row}: {source}")]
    Syntax { row: usize, source: SyntaxError },
    #[error("row {row}: placeholder `?{name}` is not bound")]
    UnboundPlaceholder { row: usize, name: String },
    #[error("row {row}: reference A{target} does not point to an earlier row")]
    ForwardCellReference { row: usize, target: usize },
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("sheet `{0}` has no rows")]
    NoRows(String),
    #[error("line {line}: {message}")]
    Jsonl { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResolveError {
    #[error("sheet `{sheet}` row {row}: operation `{operation}` is not declared by `{interface}`")]
    UnknownOperation { sheet: String, row: usize, operation: String, interface: String },
    #[error("sheet `{sheet}` row {row}: `{operation}` takes {expected:?} input(s), row passes {actual}")]
    ArityMismatch { sheet: String, row: usize, operation: String, expected: Vec<usize>, actual: usize },
    #[error("sheet `{sheet}` row {row}: placeholder `?{name}` is not bound")]
    UnboundPlaceholder { sheet: String, row: usize, name: String },
}

impl SequenceSheet {
    /// Checks placeholder binding, reference direction and `create` targets.
    pub fn new(name: impl Into<String>, parameters: BTreeMap<String, Value>, rows: Vec<SheetRow>) -> Result<Self, SheetError> {
        let name = name.into();
        if rows.is_empty() {
            return Err(SheetError::NoRows(name));
        }
        for (i, row) in rows.iter().enumerate() {
            let index = i + 1;
            match (&row.target, row.operation == CREATE) {
                (Target::Type(_), true) | (Target::Cell(_), false) => {}
                (Target::Cell(_), true) => {
                    return Err(SheetError::MalformedRow { row: index, message: "`create` needs a type name as target".into() })
                }
                (Target::Type(t), false) => {
                    return Err(SheetError::MalformedRow {
                        row: index,
                        message: format!("target `{t}` must be a cell reference like A1"),
                    })
                }
            }
            let check_cell = |c: &CellRef| {
                if c.row == 0 || c.row >= index {
                    Err(SheetError::ForwardCellReference { row: index, target: c.row })
                } else {
                    Ok(())
                }
            };
            let check_placeholder = |p: &String| {
                if parameters.contains_key(p) {
                    Ok(())
                } else {
                    Err(SheetError::UnboundPlaceholder { row: index, name: p.clone() })
                }
            };
            if let Target::Cell(c) = &row.target {
                check_cell(c)?;
            }
            if let Expected::Placeholder(p) = &row.expected {
                check_placeholder(p)?;
            }
            for input in &row.inputs {
                match input {
                    Input::Cell(c) => check_cell(c)?,
                    Input::Placeholder(p) => check_placeholder(p)?,
                    Input::Literal(_) => {}
                }
            }
        }
        Ok(Self { name, parameters, rows })
    }

    pub fn oracle_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.expected != Expected::Absent).count()
    }
}

enum RawCell {
    Blank,
    Placeholder(String),
    Cell(String),
    Name(String),
    Literal(Value),
}

fn raw_cell(cur: &mut Cursor) -> Result<RawCell, SyntaxError> {
    if cur.at_value() {
        return cur.value().map(RawCell::Literal);
    }
    if cur.eat_punct('?') {
        return cur.expect_ident().map(RawCell::Placeholder);
    }
    match &cur.peek().tok {
        Tok::Ident(s) => {
            let s = s.clone();
            cur.bump();
            Ok(if s == "_" {
                RawCell::Blank
            } else if is_cell_ref(&s) {
                RawCell::Cell(s)
            } else {
                RawCell::Name(s)
            })
        }
        _ => Err(cur.unexpected("cell")),
    }
}

fn cell_ref(text: &str, row: usize) -> Result<CellRef, SheetError> {
    if !text.starts_with('A') {
        return Err(SheetError::MalformedRow {
            row,
            message: format!("only column A can be referenced, found `{text}`"),
        });
    }
    let n: usize = text[1..].parse().map_err(|_| SheetError::MalformedRow { row, message: format!("bad reference `{text}`") })?;
    Ok(CellRef { row: n })
}

fn build_row(cells: Vec<RawCell>, row: usize) -> Result<SheetRow, SheetError> {
    let malformed = |message: String| SheetError::MalformedRow { row, message };
    if cells.len() < 3 {
        return Err(malformed(format!("expected at least 3 cells (expected, operation, target), found {}", cells.len())));
    }
    let mut cells = cells.into_iter();
    let expected = match cells.next().expect("len checked") {
        RawCell::Blank => Expected::Absent,
        RawCell::Placeholder(p) => Expected::Placeholder(p),
        RawCell::Literal(v) => Expected::Literal(v),
        RawCell::Cell(s) | RawCell::Name(s) => return Err(malformed(format!("`{s}` is not a valid expected value"))),
    };
    let operation = match cells.next().expect("len checked") {
        RawCell::Name(s) | RawCell::Cell(s) => s,
        _ => return Err(malformed("operation must be an identifier".into())),
    };
    let target = match cells.next().expect("len checked") {
        RawCell::Cell(s) if operation != CREATE => Target::Cell(cell_ref(&s, row)?),
        RawCell::Name(s) | RawCell::Cell(s) => Target::Type(s),
        RawCell::Literal(Value::Str(s)) => Target::Type(s),
        _ => return Err(malformed("target must be a type name or cell reference".into())),
    };
    let inputs = cells
        .map(|c| match c {
            RawCell::Literal(v) => Ok(Input::Literal(v)),
            RawCell::Cell(s) => Ok(Input::Cell(cell_ref(&s, row)?)),
            RawCell::Placeholder(p) => Ok(Input::Placeholder(p)),
            RawCell::Blank => Err(malformed("`_` is only allowed in the expected column".into())),
            RawCell::Name(s) => Err(malformed(format!("bare identifier `{s}` is not a valid input"))),
        })
        .collect::<Result<_, _>>()?;
    Ok(SheetRow { expected, operation, target, inputs })
}

/// Parses `row` statements until the cursor reaches something else.
pub(crate) fn parse_rows(cur: &mut Cursor) -> Result<Vec<SheetRow>, SheetError> {
    let mut rows = Vec::new();
    while cur.is_keyword("row") {
        let index = rows.len() + 1;
        cur.bump();
        let wrap = |source| SheetError::Syntax { row: index, source };
        let mut cells = vec![raw_cell(cur).map_err(wrap)?];
        while cur.eat_punct(',') {
            cells.push(raw_cell(cur).map_err(wrap)?);
        }
        rows.push(build_row(cells, index)?);
    }
    Ok(rows)
}

/// Parses rows written in the study-script row syntax.
pub fn parse_sheet_rows(name: &str, rows_text: &str, params: BTreeMap<String, Value>) -> Result<SequenceSheet, SheetError> {
    let mut cur = Cursor::new(rows_text).map_err(|source| SheetError::Syntax { row: 0, source })?;
    let rows = parse_rows(&mut cur)?;
    if !cur.at_eof() {
        return Err(SheetError::Syntax { row: rows.len() + 1, source: cur.unexpected("`row`") });
    }
    SequenceSheet::new(name, params, rows)
}

fn jsonl_sheet(json: &Json, line: usize) -> Result<SequenceSheet, SheetError> {
    let err = |message: String| SheetError::Jsonl { line, message };
    let obj = json.as_object().ok_or_else(|| err("expected a JSON object".into()))?;
    let name = obj.get("name").and_then(Json::as_str).ok_or_else(|| err("missing string key \"name\"".into()))?;
    let mut parameters = BTreeMap::new();
    if let Some(p) = obj.get("parameters") {
        let p = p.as_object().ok_or_else(|| err("\"parameters\" must be an object".into()))?;
        for (k, v) in p {
            parameters.insert(k.clone(), Value::from_json(v).map_err(|e| err(format!("parameter {k}: {e}")))?);
        }
    }
    let rows_json = obj.get("rows").and_then(Json::as_array).ok_or_else(|| err("missing array key \"rows\"".into()))?;
    let mut rows = Vec::with_capacity(rows_json.len());
    for (i, r) in rows_json.iter().enumerate() {
        let index = i + 1;
        let cells = r.as_array().ok_or_else(|| err(format!("row {index} is not an array")))?;
        let raw = cells
            .iter()
            .enumerate()
            .map(|(pos, c)| match c {
                Json::Null if pos == 0 => Ok(RawCell::Blank),
                Json::String(s) if s.starts_with('?') && s.len() > 1 => Ok(RawCell::Placeholder(s[1..].to_string())),
                Json::String(s) if pos > 0 && is_cell_ref(s) => Ok(RawCell::Cell(s.clone())),
                Json::String(s) if pos == 1 || pos == 2 => Ok(RawCell::Name(s.clone())),
                other => Value::from_json(other).map(RawCell::Literal).map_err(|e| err(format!("row {index}: {e}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(build_row(raw, index).map_err(|e| err(e.to_string()))?);
    }
    SequenceSheet::new(name, parameters, rows).map_err(|e| err(e.to_string()))
}

/// One sheet per non-blank line: `{"name", "parameters", "rows"}`.
pub fn parse_jsonl_sheet(lines: &str) -> Result<Vec<SequenceSheet>, SheetError> {
    let mut out = Vec::new();
    for (i, line) in lines.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let json: Json = serde_json::from_str(line).map_err(|e| SheetError::Jsonl { line: i + 1, message: e.to_string() })?;
        out.push(jsonl_sheet(&json, i + 1)?);
    }
    Ok(out)
}

/// Inverse of [`parse_jsonl_sheet`] for a single sheet.
pub fn sheet_to_jsonl(sheet: &SequenceSheet) -> String {
    let row_json = |row: &SheetRow| {
        let mut cells = vec![
            match &row.expected {
                Expected::Absent => Json::Null,
                Expected::Placeholder(p) => Json::String(format!("?{p}")),
                Expected::Literal(v) => v.to_json(),
            },
            Json::String(row.operation.clone()),
            Json::String(row.target.to_string()),
        ];
        cells.extend(row.inputs.iter().map(|i| match i {
            Input::Literal(v) => v.to_json(),
            Input::Cell(c) => Json::String(c.to_string()),
            Input::Placeholder(p) => Json::String(format!("?{p}")),
        }));
        Json::Array(cells)
    };
    serde_json::json!({
        "name": sheet.name,
        "parameters": sheet.parameters.iter().map(|(k, v)| (k.clone(), v.to_json())).collect::<serde_json::Map<_, _>>(),
        "rows": sheet.rows.iter().map(row_json).collect::<Vec<_>>(),
    })
    .to_string()
}

/// A placeholder-free input: a literal or the result of an earlier statement.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanInput {
    Value(Value),
    Cell(CellRef),
}

impl PlanInput {
    /// Cell references travel as `{"!ref": "A<row>"}`, the same tag used for
    /// instance results.
    pub fn to_json(&self) -> Json {
        match self {
            PlanInput::Value(v) => v.to_json(),
            PlanInput::Cell(c) => serde_json::json!({ REF_TAG: c.to_string() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statement {
    pub index: usize,
    pub operation: String,
    pub target: Target,
    pub inputs: Vec<PlanInput>,
    pub expected: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvocationPlan {
    pub sheet_name: String,
    pub signature: InterfaceSignature,
    pub statements: Vec<Statement>,
    pub timeout_ms: u64,
}

impl InvocationPlan {
    /// Plan document written to a subject runner's stdin.
    pub fn to_wire(&self, task_id: &str, module_path: &str) -> Json {
        let statements: Vec<Json> = self
            .statements
            .iter()
            .map(|s| {
                serde_json::json!({
                    "index": s.index,
                    "op": s.operation,
                    "target": s.target.to_string(),
                    "inputs": s.inputs.iter().map(PlanInput::to_json).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({
            "taskId": task_id,
            "modulePath": module_path,
            "signature": {
                "name": self.signature.name,
                "operations": self.signature.operations,
                "lql": render_lql(&self.signature),
            },
            "statements": statements,
            "timeoutMs": self.timeout_ms,
        })
    }
}

pub fn resolve(sheet: &SequenceSheet, sig: &InterfaceSignature, timeout_ms: u64) -> Result<InvocationPlan, ResolveError> {
    let mut statements = Vec::with_capacity(sheet.rows.len());
    for (i, row) in sheet.rows.iter().enumerate() {
        let index = i + 1;
        let param = |name: &String| {
            sheet.parameters.get(name).cloned().ok_or_else(|| ResolveError::UnboundPlaceholder {
                sheet: sheet.name.clone(),
                row: index,
                name: name.clone(),
            })
        };
        if row.operation != CREATE {
            let arities: Vec<usize> = sig.operations_named(&row.operation).map(|op| op.inputs.len()).collect();
            if arities.is_empty() {
                return Err(ResolveError::UnknownOperation {
                    sheet: sheet.name.clone(),
                    row: index,
                    operation: row.operation.clone(),
                    interface: sig.name.clone(),
                });
            }
            if !arities.contains(&row.inputs.len()) {
                return Err(ResolveError::ArityMismatch {
                    sheet: sheet.name.clone(),
                    row: index,
                    operation: row.operation.clone(),
                    expected: arities,
                    actual: row.inputs.len(),
                });
            }
        }
        let inputs = row
            .inputs
            .iter()
            .map(|input| match input {
                Input::Literal(v) => Ok(PlanInput::Value(v.clone())),
                Input::Cell(c) => Ok(PlanInput::Cell(*c)),
                Input::Placeholder(p) => param(p).map(PlanInput::Value),
            })
            .collect::<Result<_, _>>()?;
        let expected = match &row.expected {
            Expected::Absent => None,
            Expected::Placeholder(p) => Some(param(p)?),
            Expected::Literal(v) => Some(v.clone()),
        };
        statements.push(Statement { index, operation: row.operation.clone(), target: row.target.clone(), inputs, expected });
    }
    Ok(InvocationPlan { sheet_name: sheet.name.clone(), signature: sig.clone(), statements, timeout_ms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lql::parse_lql;

    fn base64_sig() -> InterfaceSignature {
        parse_lql("Base64 { encode(byte[])->byte[] decode(java.lang.String)->byte[] }").unwrap()
    }

    fn base64_params() -> BTreeMap<String, Value> {
        [
            ("p1".to_string(), Value::bytes("Hello World!")),
            ("p2".to_string(), Value::bytes("SGVsbG8gV29ybGQh")),
        ]
        .into()
    }

    const BASE64_ROWS: &str = "row _, create, Base64\nrow ?p2, encode, A1, ?p1";

    #[test]
    fn parses_two_row_sheet_with_placeholder_oracle() {
        let sheet = parse_sheet_rows("testEncode", BASE64_ROWS, base64_params()).unwrap();
        assert_eq!(sheet.rows.len(), 2);
        assert_eq!(sheet.rows[0].expected, Expected::Absent);
        assert_eq!(sheet.rows[0].target, Target::Type("Base64".into()));
        assert_eq!(sheet.rows[1].expected, Expected::Placeholder("p2".into()));
        assert_eq!(sheet.rows[1].target, Target::Cell(CellRef { row: 1 }));
        assert_eq!(sheet.rows[1].inputs, vec![Input::Placeholder("p1".into())]);
        assert_eq!(sheet.oracle_rows(), 1);
    }

    #[test]
    fn single_create_row() {
        let sheet = parse_sheet_rows("t", "row _, create, X", BTreeMap::new()).unwrap();
        assert_eq!(sheet.rows.len(), 1);
        assert_eq!(sheet.oracle_rows(), 0);
    }

    #[test]
    fn forward_reference_is_rejected() {
        let err = parse_sheet_rows("t", "row _, create, X\nrow _, f, A3", BTreeMap::new()).unwrap_err();
        assert_eq!(err, SheetError::ForwardCellReference { row: 2, target: 3 });
        let self_ref = parse_sheet_rows("t", "row _, create, X\nrow _, f, A2", BTreeMap::new()).unwrap_err();
        assert_eq!(self_ref, SheetError::ForwardCellReference { row: 2, target: 2 });
        let in_input = parse_sheet_rows("t", "row _, create, X\nrow _, f, A1, A5", BTreeMap::new()).unwrap_err();
        assert_eq!(in_input, SheetError::ForwardCellReference { row: 2, target: 5 });
    }

    #[test]
    fn unbound_placeholder_and_malformed_rows() {
        let err = parse_sheet_rows("t", "row _, create, X\nrow ?p9, f, A1", BTreeMap::new()).unwrap_err();
        assert_eq!(err, SheetError::UnboundPlaceholder { row: 2, name: "p9".into() });
        assert!(matches!(
            parse_sheet_rows("t", "row _, create", BTreeMap::new()),
            Err(SheetError::MalformedRow { row: 1, .. })
        ));
        assert!(matches!(
            parse_sheet_rows("t", "row _, create, X\nrow _, f, B1", BTreeMap::new()),
            Err(SheetError::MalformedRow { row: 2, .. })
        ));
        assert!(parse_sheet_rows("t", "row _, create, A1", BTreeMap::new()).is_ok());
        assert!(matches!(
            parse_sheet_rows("t", "row _, f, X", BTreeMap::new()),
            Err(SheetError::MalformedRow { row: 1, .. })
        ));
        assert!(matches!(
            parse_sheet_rows("t", "row _, create, X\nrow _, f, A1, bogus", BTreeMap::new()),
            Err(SheetError::MalformedRow { row: 2, .. })
        ));
        assert!(matches!(parse_sheet_rows("t", "", BTreeMap::new()), Err(SheetError::NoRows(_))));
    }

    #[test]
    fn resolves_against_signature() {
        let sheet = parse_sheet_rows("testEncode", BASE64_ROWS, base64_params()).unwrap();
        let plan = resolve(&sheet, &base64_sig(), 5000).unwrap();
        assert_eq!(plan.statements.len(), 2);
        assert_eq!(plan.statements[0].expected, None);
        assert_eq!(plan.statements[1].expected, Some(Value::bytes("SGVsbG8gV29ybGQh")));
        assert_eq!(plan.statements[1].inputs, vec![PlanInput::Value(Value::bytes("Hello World!"))]);
        assert_eq!(plan, resolve(&sheet, &base64_sig(), 5000).unwrap());
    }

    #[test]
    fn unknown_operation() {
        let sheet = parse_sheet_rows("t", "row _, create, Base64\nrow _, encrypt, A1, b\"AA==\"", BTreeMap::new()).unwrap();
        assert!(matches!(
            resolve(&sheet, &base64_sig(), 1),
            Err(ResolveError::UnknownOperation { row: 2, ref operation, .. }) if operation == "encrypt"
        ));
    }

    #[test]
    fn arity_mismatch() {
        let sheet = parse_sheet_rows("t", "row _, create, Base64\nrow _, encode, A1, b\"AA==\", b\"AA==\"", BTreeMap::new()).unwrap();
        assert_eq!(
            resolve(&sheet, &base64_sig(), 1).unwrap_err(),
            ResolveError::ArityMismatch {
                sheet: "t".into(),
                row: 2,
                operation: "encode".into(),
                expected: vec![1],
                actual: 2
            }
        );
    }

    const BASE64_JSONL: &str = r#"{"name": "testEncode", "parameters": {"p1": {"!bytes": "SGVsbG8gV29ybGQh"}, "p2": {"!bytes": "U0dWc2JHOGdWMjl5YkdRaA=="}}, "rows": [[null, "create", "Base64"], ["?p2", "encode", "A1", "?p1"]]}"#;

    #[test]
    fn jsonl_matches_dsl_form() {
        let from_jsonl = parse_jsonl_sheet(BASE64_JSONL).unwrap();
        let from_dsl = parse_sheet_rows("testEncode", BASE64_ROWS, base64_params()).unwrap();
        assert_eq!(from_jsonl, vec![from_dsl.clone()]);
        assert_eq!(
            resolve(&from_jsonl[0], &base64_sig(), 7).unwrap(),
            resolve(&from_dsl, &base64_sig(), 7).unwrap()
        );
        assert_eq!(parse_jsonl_sheet(&sheet_to_jsonl(&from_dsl)).unwrap(), vec![from_dsl]);
    }

    #[test]
    fn jsonl_edge_cases() {
        assert_eq!(parse_jsonl_sheet("").unwrap(), vec![]);
        let err = parse_jsonl_sheet(r#"{"name": "t"}"#).unwrap_err();
        assert!(matches!(err, SheetError::Jsonl { line: 1, ref message } if message.contains("rows")), "{err}");
        let err = parse_jsonl_sheet("\n{oops").unwrap_err();
        assert!(matches!(err, SheetError::Jsonl { line: 2, .. }));
    }

    #[test]
    fn wire_plan_encodes_refs_and_bytes() {
        let sheet = parse_sheet_rows("testEncode", BASE64_ROWS, base64_params()).unwrap();
        let plan = resolve(&sheet, &base64_sig(), 5000).unwrap();
        let wire = plan.to_wire("t1", "/tmp/m.py");
        assert_eq!(wire["statements"][1]["target"], "A1");
        assert_eq!(wire["statements"][1]["inputs"][0]["!bytes"], "SGVsbG8gV29ybGQh");
        assert_eq!(wire["signature"]["operations"][0]["name"], "encode");
        assert_eq!(wire["timeoutMs"], 5000);
    }
}
