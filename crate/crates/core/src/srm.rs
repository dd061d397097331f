//! Stimulus-response matrices, the hypercube index over them, and the
//! long-format exporters.
//!
//! Rows are sheet statements, columns are implementations plus one oracle
//! column, cells are observations. Cells are write-once; the oracle column
//! is filled when the matrix is created and never touched afterwards.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::lql::InterfaceSignature;
use crate::ssn::{resolve, InvocationPlan, ResolveError, SequenceSheet};
use crate::value::Value;

pub const ORACLE_ID: &str = "oracle";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Status {
    Value,
    Exception,
    Timeout,
    AdapterError,
    LoadError,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Value => "value",
            Status::Exception => "exception",
            Status::Timeout => "timeout",
            Status::AdapterError => "adapterError",
            Status::LoadError => "loadError",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        Some(match text {
            "value" => Status::Value,
            "exception" => Status::Exception,
            "timeout" => Status::Timeout,
            "adapterError" => Status::AdapterError,
            "loadError" => Status::LoadError,
            _ => return None,
        })
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", try_from = "RawObservation")]
pub struct Observation {
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
    #[serde(default)]
    pub duration_micros: u64,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawObservation {
    status: Status,
    #[serde(default)]
    value: Option<Json>,
    #[serde(default)]
    detail: Option<String>,
    #[serde(default)]
    duration_micros: u64,
}

impl TryFrom<RawObservation> for Observation {
    type Error = String;

    fn try_from(raw: RawObservation) -> Result<Self, String> {
        let value = match (raw.status, raw.value) {
            (Status::Value, Some(v)) => Some(Value::from_json(&v).map_err(|e| e.to_string())?),
            // A JSON null is a legitimate returned value.
            (Status::Value, None) => Some(Value::Null),
            (_, None) | (_, Some(Json::Null)) => None,
            (s, Some(_)) => return Err(format!("status {s} must not carry a value")),
        };
        Ok(Observation { status: raw.status, value, detail: raw.detail.unwrap_or_default(), duration_micros: raw.duration_micros })
    }
}

impl Observation {
    pub fn value(v: Value) -> Self {
        Self { status: Status::Value, value: Some(v), detail: String::new(), duration_micros: 0 }
    }

    fn non_value(status: Status, detail: impl Into<String>) -> Self {
        Self { status, value: None, detail: detail.into(), duration_micros: 0 }
    }

    pub fn exception(detail: impl Into<String>) -> Self {
        Self::non_value(Status::Exception, detail)
    }

    pub fn timeout(detail: impl Into<String>) -> Self {
        Self::non_value(Status::Timeout, detail)
    }

    pub fn adapter_error(detail: impl Into<String>) -> Self {
        Self::non_value(Status::AdapterError, detail)
    }

    pub fn load_error(detail: impl Into<String>) -> Self {
        Self::non_value(Status::LoadError, detail)
    }

    pub fn with_duration(mut self, micros: u64) -> Self {
        self.duration_micros = micros;
        self
    }

    /// For exceptions, the type name in front of `Type: message`.
    pub fn exception_type(&self) -> &str {
        self.detail.split(':').next().unwrap_or("").trim()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowKey {
    pub sheet: String,
    pub statement: usize,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Oracle,
    Candidate,
}

impl ColumnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ColumnKind::Oracle => "oracle",
            ColumnKind::Candidate => "candidate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnKey {
    pub impl_id: String,
    pub kind: ColumnKind,
}

impl ColumnKey {
    pub fn candidate(id: impl Into<String>) -> Self {
        Self { impl_id: id.into(), kind: ColumnKind::Candidate }
    }

    pub fn oracle() -> Self {
        Self { impl_id: ORACLE_ID.into(), kind: ColumnKind::Oracle }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SrmError {
    #[error("implementation `{0}` is already a column")]
    DuplicateImplId(String),
    #[error("no row {sheet}/{statement}")]
    UnknownRow { sheet: String, statement: usize },
    #[error("no column `{0}`")]
    UnknownColumn(String),
    #[error("cell ({row}, {column}) is already set")]
    CellAlreadySet { row: String, column: String },
    #[error("the oracle column is written only when the matrix is created")]
    OracleReadOnly,
    #[error("coordinate {0} is already present")]
    DuplicateCoord(String),
    #[error("coordinate {coord} has dimensions {found:?}, expected {expected:?}")]
    DimensionMismatch { coord: String, found: Vec<String>, expected: Vec<String> },
    #[error("dimension name `{0}` collides with an export column")]
    ReservedDimension(String),
    #[error(transparent)]
    Resolve(#[from] ResolveError),
}

/// The observation grid shared by live matrices and re-imported exports.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub rows: Vec<RowKey>,
    pub columns: Vec<ColumnKey>,
    cells: BTreeMap<(usize, usize), Observation>,
}

impl Table {
    pub fn new(rows: Vec<RowKey>, columns: Vec<ColumnKey>) -> Self {
        Self { rows, columns, cells: BTreeMap::new() }
    }

    pub fn row_index(&self, sheet: &str, statement: usize) -> Option<usize> {
        self.rows.iter().position(|r| r.sheet == sheet && r.statement == statement)
    }

    pub fn column_index(&self, impl_id: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.impl_id == impl_id)
    }

    pub fn oracle_index(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.kind == ColumnKind::Oracle)
    }

    pub fn candidate_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.columns.iter().enumerate().filter(|(_, c)| c.kind == ColumnKind::Candidate).map(|(i, _)| i)
    }

    pub fn cell(&self, row: usize, column: usize) -> Option<&Observation> {
        self.cells.get(&(row, column))
    }

    pub fn get(&self, row: &RowKey, impl_id: &str) -> Option<&Observation> {
        let r = self.row_index(&row.sheet, row.statement)?;
        let c = self.column_index(impl_id)?;
        self.cell(r, c)
    }

    pub fn set_cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&RowKey, &ColumnKey, &Observation)> {
        self.cells.iter().map(|(&(r, c), o)| (&self.rows[r], &self.columns[c], o))
    }

    /// Cell contents keyed by row/column identity, independent of layout.
    pub fn cell_map(&self) -> BTreeMap<(RowKey, ColumnKey), Observation> {
        self.cells().map(|(r, c, o)| ((r.clone(), c.clone()), o.clone())).collect()
    }

    pub fn add_column(&mut self, key: ColumnKey) -> Result<usize, SrmError> {
        if self.column_index(&key.impl_id).is_some() {
            return Err(SrmError::DuplicateImplId(key.impl_id));
        }
        self.columns.push(key);
        Ok(self.columns.len() - 1)
    }

    fn put(&mut self, row: usize, column: usize, obs: Observation) -> Result<(), SrmError> {
        use std::collections::btree_map::Entry;
        match self.cells.entry((row, column)) {
            Entry::Occupied(_) => Err(SrmError::CellAlreadySet {
                row: self.rows[row].label.clone(),
                column: self.columns[column].impl_id.clone(),
            }),
            Entry::Vacant(v) => {
                v.insert(obs);
                Ok(())
            }
        }
    }

    /// Writes a candidate cell. The oracle column is read-only here.
    pub fn record(&mut self, sheet: &str, statement: usize, impl_id: &str, obs: Observation) -> Result<(), SrmError> {
        let r = self
            .row_index(sheet, statement)
            .ok_or_else(|| SrmError::UnknownRow { sheet: sheet.to_string(), statement })?;
        let c = self.column_index(impl_id).ok_or_else(|| SrmError::UnknownColumn(impl_id.to_string()))?;
        if self.columns[c].kind == ColumnKind::Oracle {
            return Err(SrmError::OracleReadOnly);
        }
        self.put(r, c, obs)
    }

    /// True when every candidate column has a cell in every row.
    pub fn is_complete(&self) -> bool {
        self.candidate_indices().all(|c| (0..self.rows.len()).all(|r| self.cells.contains_key(&(r, c))))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Implementation {
    pub impl_id: String,
    pub source_text: String,
    pub provenance: BTreeMap<String, String>,
    /// Set when generation produced no usable code; the arena records
    /// loadError for every cell of such a column without running it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SheetEntry {
    /// Unique within the matrix: the test name, suffixed `#k` when the same
    /// name appears more than once.
    pub key: String,
    pub sheet: SequenceSheet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StimulusMatrix {
    pub id: String,
    pub signature: InterfaceSignature,
    pub sheets: Vec<SheetEntry>,
    pub implementations: Vec<Implementation>,
    pub table: Table,
}

fn short_name(name: &str) -> &str {
    name.split('(').next().unwrap_or(name).trim()
}

impl StimulusMatrix {
    pub fn new(id: impl Into<String>, signature: InterfaceSignature, sheets: Vec<SequenceSheet>) -> Result<Self, SrmError> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for s in &sheets {
            *counts.entry(s.name.clone()).or_default() += 1;
        }
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut entries = Vec::with_capacity(sheets.len());
        let mut rows = Vec::new();
        let mut oracle = Vec::new();
        for sheet in sheets {
            let plan = resolve(&sheet, &signature, 0)?;
            let (key, short) = if counts[&sheet.name] > 1 {
                let k = seen.entry(sheet.name.clone()).or_default();
                *k += 1;
                (format!("{}#{k}", sheet.name), format!("{}#{k}", short_name(&sheet.name)))
            } else {
                (sheet.name.clone(), short_name(&sheet.name).to_string())
            };
            for st in plan.statements {
                if let Some(v) = st.expected {
                    oracle.push((rows.len(), v));
                }
                rows.push(RowKey { sheet: key.clone(), statement: st.index, label: format!("{short}/{}", st.index) });
            }
            entries.push(SheetEntry { key, sheet });
        }
        let mut table = Table::new(rows, vec![ColumnKey::oracle()]);
        for (row, v) in oracle {
            table.put(row, 0, Observation::value(v)).expect("fresh table");
        }
        Ok(Self { id: id.into(), signature, sheets: entries, implementations: Vec::new(), table })
    }

    /// Appends candidate columns; all-or-nothing on duplicate ids.
    pub fn add_implementations(&mut self, candidates: Vec<Implementation>) -> Result<(), SrmError> {
        let mut ids: BTreeSet<&str> = self.table.columns.iter().map(|c| c.impl_id.as_str()).collect();
        for c in &candidates {
            if !ids.insert(&c.impl_id) {
                return Err(SrmError::DuplicateImplId(c.impl_id.clone()));
            }
        }
        for c in candidates {
            self.table.add_column(ColumnKey::candidate(c.impl_id.clone()))?;
            self.implementations.push(c);
        }
        Ok(())
    }

    pub fn record(&mut self, row: &RowKey, impl_id: &str, obs: Observation) -> Result<(), SrmError> {
        self.table.record(&row.sheet, row.statement, impl_id, obs)
    }

    pub fn implementation(&self, impl_id: &str) -> Option<&Implementation> {
        self.implementations.iter().find(|i| i.impl_id == impl_id)
    }

    /// One resolved plan per sheet, named by sheet key.
    pub fn plans(&self, timeout_ms: u64) -> Result<Vec<InvocationPlan>, SrmError> {
        self.sheets
            .iter()
            .map(|e| {
                let mut plan = resolve(&e.sheet, &self.signature, timeout_ms)?;
                plan.sheet_name = e.key.clone();
                Ok(plan)
            })
            .collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.table.rows.len(), self.table.columns.len())
    }
}

/// Serializes concurrent writes to distinct cells of one table.
pub struct Recorder {
    table: Mutex<Table>,
}

impl Recorder {
    pub fn new(table: Table) -> Self {
        Self { table: Mutex::new(table) }
    }

    pub fn record(&self, sheet: &str, statement: usize, impl_id: &str, obs: Observation) -> Result<(), SrmError> {
        self.table.lock().expect("recorder lock").record(sheet, statement, impl_id, obs)
    }

    pub fn into_inner(self) -> Table {
        self.table.into_inner().expect("recorder lock")
    }
}

pub const DIM_STUDY: &str = "study";
pub const DIM_ARM: &str = "arm";
pub const DIM_MATRIX: &str = "matrixId";
pub const DIM_MODEL: &str = "model";
pub const DIM_PROMPT: &str = "promptId";

const FIXED_COLUMNS: [&str; 9] =
    ["sheet", "statement", "rowLabel", "implId", "columnKind", "status", "valueJson", "detail", "durationMicros"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coord(pub BTreeMap<String, String>);

impl Coord {
    pub fn new<K: Into<String>, V: Into<String>>(dims: impl IntoIterator<Item = (K, V)>) -> Self {
        Self(dims.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }

    pub fn get(&self, dim: &str) -> Option<&str> {
        self.0.get(dim).map(String::as_str)
    }

    pub fn with(mut self, dim: &str, value: impl Into<String>) -> Self {
        self.0.insert(dim.to_string(), value.into());
        self
    }

    pub fn dims(&self) -> Vec<String> {
        self.0.keys().cloned().collect()
    }

    /// The coordinate with one dimension removed.
    pub fn without(&self, dim: &str) -> Coord {
        let mut c = self.clone();
        c.0.remove(dim);
        c
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

/// Matrices indexed by experimental coordinates.
#[derive(Debug, Clone, Default)]
pub struct Srh {
    pub entries: BTreeMap<Coord, StimulusMatrix>,
}

impl Srh {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, coord: Coord, matrix: StimulusMatrix) -> Result<(), SrmError> {
        check_coord(self.entries.keys().next(), &coord)?;
        if self.entries.contains_key(&coord) {
            return Err(SrmError::DuplicateCoord(coord.to_string()));
        }
        self.entries.insert(coord, matrix);
        Ok(())
    }

    pub fn tables(&self) -> BTreeMap<Coord, &Table> {
        self.entries.iter().map(|(c, m)| (c.clone(), &m.table)).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_coord(existing: Option<&Coord>, coord: &Coord) -> Result<(), SrmError> {
    for dim in coord.0.keys() {
        if FIXED_COLUMNS.contains(&dim.as_str()) {
            return Err(SrmError::ReservedDimension(dim.clone()));
        }
    }
    if let Some(first) = existing {
        if first.dims() != coord.dims() {
            return Err(SrmError::DimensionMismatch {
                coord: coord.to_string(),
                found: coord.dims(),
                expected: first.dims(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

fn long_records<'a>(tables: impl IntoIterator<Item = (&'a Coord, &'a Table)>) -> Vec<Vec<(String, Json)>> {
    let mut out = Vec::new();
    for (coord, table) in tables {
        for (row, col, obs) in table.cells() {
            let mut rec: Vec<(String, Json)> = coord.0.iter().map(|(k, v)| (k.clone(), Json::String(v.clone()))).collect();
            rec.push(("sheet".into(), Json::String(row.sheet.clone())));
            rec.push(("statement".into(), Json::from(row.statement)));
            rec.push(("rowLabel".into(), Json::String(row.label.clone())));
            rec.push(("implId".into(), Json::String(col.impl_id.clone())));
            rec.push(("columnKind".into(), Json::String(col.kind.as_str().into())));
            rec.push(("status".into(), Json::String(obs.status.as_str().into())));
            rec.push((
                "valueJson".into(),
                obs.value.as_ref().map_or(Json::Null, |v| Json::String(v.to_json_string())),
            ));
            rec.push(("detail".into(), Json::String(obs.detail.clone())));
            rec.push(("durationMicros".into(), Json::from(obs.duration_micros)));
            out.push(rec);
        }
    }
    out
}

/// Long format: one record per set cell, ordered by (coordinate, row, column).
pub fn export_long<'a>(tables: impl IntoIterator<Item = (&'a Coord, &'a Table)>, format: ExportFormat) -> Vec<u8> {
    let tables: Vec<_> = tables.into_iter().collect();
    let dims: Vec<String> = tables.first().map(|(c, _)| c.dims()).unwrap_or_default();
    let records = long_records(tables);
    match format {
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
            let header: Vec<&str> = dims.iter().map(String::as_str).chain(FIXED_COLUMNS).collect();
            w.write_record(&header).expect("in-memory write");
            for rec in records {
                let fields = rec.iter().map(|(_, v)| match v {
                    Json::String(s) => s.clone(),
                    Json::Null => String::new(),
                    other => other.to_string(),
                });
                w.write_record(fields).expect("in-memory write");
            }
            w.into_inner().expect("in-memory flush")
        }
        ExportFormat::Jsonl => {
            let mut out = Vec::new();
            for rec in records {
                let obj: serde_json::Map<String, Json> = rec.into_iter().collect();
                out.extend(Json::Object(obj).to_string().into_bytes());
                out.push(b'\n');
            }
            out
        }
    }
}

pub fn export_srh(srh: &Srh, format: ExportFormat) -> Vec<u8> {
    export_long(srh.entries.iter().map(|(c, m)| (c, &m.table)), format)
}

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ImportError {
    pub line: usize,
    pub message: String,
}

/// Rebuilds per-coordinate tables from a JSONL long export. Row order follows
/// first appearance; the oracle column comes first.
pub fn import_long_jsonl(text: &str) -> Result<BTreeMap<Coord, Table>, ImportError> {
    let mut out: BTreeMap<Coord, Table> = BTreeMap::new();
    let mut dims: Option<Vec<String>> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| ImportError { line: i + 1, message };
        let obj: serde_json::Map<String, Json> = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let str_field = |k: &str| obj.get(k).and_then(Json::as_str).ok_or_else(|| err(format!("missing `{k}`")));
        let coord = Coord(
            obj.iter()
                .filter(|(k, _)| !FIXED_COLUMNS.contains(&k.as_str()))
                .map(|(k, v)| Ok((k.clone(), v.as_str().ok_or_else(|| err(format!("dimension `{k}` is not a string")))?.to_string())))
                .collect::<Result<_, _>>()?,
        );
        match &dims {
            None => dims = Some(coord.dims()),
            Some(d) if *d != coord.dims() => return Err(err("dimension names differ from earlier lines".into())),
            _ => {}
        }
        let row = RowKey {
            sheet: str_field("sheet")?.to_string(),
            statement: obj.get("statement").and_then(Json::as_u64).ok_or_else(|| err("missing `statement`".into()))? as usize,
            label: str_field("rowLabel")?.to_string(),
        };
        let kind = match str_field("columnKind")? {
            "oracle" => ColumnKind::Oracle,
            "candidate" => ColumnKind::Candidate,
            other => return Err(err(format!("unknown columnKind `{other}`"))),
        };
        let impl_id = str_field("implId")?.to_string();
        let status = Status::parse(str_field("status")?).ok_or_else(|| err("unknown status".into()))?;
        let value = match obj.get("valueJson") {
            Some(Json::String(s)) => Some(Value::from_json_str(s).map_err(|e| err(e.to_string()))?),
            _ => None,
        };
        if (status == Status::Value) != value.is_some() {
            return Err(err("value must be present exactly when status is value".into()));
        }
        let obs = Observation {
            status,
            value,
            detail: obj.get("detail").and_then(Json::as_str).unwrap_or("").to_string(),
            duration_micros: obj.get("durationMicros").and_then(Json::as_u64).unwrap_or(0),
        };
        let table = out.entry(coord).or_default();
        let r = match table.row_index(&row.sheet, row.statement) {
            Some(r) => r,
            None => {
                table.rows.push(row);
                table.rows.len() - 1
            }
        };
        let c = match table.column_index(&impl_id) {
            Some(c) => c,
            None => table.add_column(ColumnKey { impl_id, kind }).expect("absent"),
        };
        table.put(r, c, obs).map_err(|e| err(e.to_string()))?;
    }
    for table in out.values_mut() {
        if let Some(o) = table.oracle_index().filter(|&o| o != 0) {
            let remap = |c: usize| if c == o { 0 } else if c < o { c + 1 } else { c };
            let oracle = table.columns.remove(o);
            table.columns.insert(0, oracle);
            table.cells = std::mem::take(&mut table.cells).into_iter().map(|((r, c), v)| ((r, remap(c)), v)).collect();
        }
    }
    Ok(out)
}
