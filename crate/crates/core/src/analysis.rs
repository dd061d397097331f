//! Verdicts, pairwise equivalence, behavioral clusters and arm comparison
//! over observation tables.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use crate::par::{map_ordered, Parallelism};
use crate::srm::{ColumnKind, Coord, Observation, Status, Table};
use crate::value::Value;

pub const DEFAULT_FLOAT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("matrix is incomplete: no observation for {column} at {row}")]
    IncompleteMatrix { row: String, column: String },
    #[error("{0}")]
    DimensionMismatch(String),
    #[error("arm `{0}` has no candidate implementations")]
    EmptyArm(String),
}

/// Deep equality; floats within `tol`, lists ordered, maps by key.
/// Distinct variants never compare equal (bytes are not strings, ints are
/// not floats).
pub fn values_equal(a: &Value, b: &Value, tol: f64) -> bool {
    match (a, b) {
        (Value::Null, Value::Null) => true,
        (Value::Bool(x), Value::Bool(y)) => x == y,
        (Value::Int(x), Value::Int(y)) => x == y,
        (Value::Float(x), Value::Float(y)) => {
            (x.is_nan() && y.is_nan()) || x == y || (x - y).abs() <= tol
        }
        (Value::Str(x), Value::Str(y)) => x == y,
        (Value::Bytes(x), Value::Bytes(y)) => x == y,
        (Value::Ref(x), Value::Ref(y)) => x == y,
        (Value::List(x), Value::List(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| values_equal(p, q, tol))
        }
        (Value::Map(x), Value::Map(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|((kp, p), (kq, q))| kp == kq && values_equal(p, q, tol))
        }
        _ => false,
    }
}

/// Same value, or the same non-value status (exceptions also by type name).
pub fn observations_equivalent(a: &Observation, b: &Observation, tol: f64) -> bool {
    match (a.status, b.status) {
        (Status::Value, Status::Value) => match (&a.value, &b.value) {
            (Some(x), Some(y)) => values_equal(x, y, tol),
            _ => false,
        },
        (Status::Exception, Status::Exception) => a.exception_type() == b.exception_type(),
        (x, y) => x == y,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SheetOutcome {
    Pass,
    Fail,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Verdict {
    pub impl_id: String,
    pub per_sheet: IndexMap<String, SheetOutcome>,
    pub passed_sheets: usize,
    pub total_sheets: usize,
    /// No sheet of the matrix carries an oracle row.
    pub vacuous: bool,
}

impl Verdict {
    pub fn pass_fraction(&self) -> f64 {
        if self.total_sheets == 0 {
            0.0
        } else {
            self.passed_sheets as f64 / self.total_sheets as f64
        }
    }

    pub fn fully_correct(&self) -> bool {
        self.passed_sheets == self.total_sheets
    }
}

fn check_complete(table: &Table) -> Result<(), AnalysisError> {
    for c in table.candidate_indices() {
        for (r, row) in table.rows.iter().enumerate() {
            if table.cell(r, c).is_none() {
                return Err(AnalysisError::IncompleteMatrix {
                    row: row.label.clone(),
                    column: table.columns[c].impl_id.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Sheet keys in row order, each with its row indices.
fn sheets(table: &Table) -> IndexMap<&str, Vec<usize>> {
    let mut out: IndexMap<&str, Vec<usize>> = IndexMap::new();
    for (r, row) in table.rows.iter().enumerate() {
        out.entry(row.sheet.as_str()).or_default().push(r);
    }
    out
}

pub fn verdicts(table: &Table, tol: f64) -> Result<Vec<Verdict>, AnalysisError> {
    check_complete(table)?;
    let oracle = table.oracle_index();
    let sheets = sheets(table);
    let oracle_cell = |r: usize| oracle.and_then(|o| table.cell(r, o));
    let vacuous = (0..table.rows.len()).all(|r| oracle_cell(r).is_none());
    Ok(table
        .candidate_indices()
        .map(|c| {
            let per_sheet: IndexMap<String, SheetOutcome> = sheets
                .iter()
                .map(|(sheet, rows)| {
                    let mut outcome = SheetOutcome::Pass;
                    for &r in rows {
                        let Some(expected) = oracle_cell(r) else { continue };
                        let observed = table.cell(r, c).expect("completeness checked");
                        if observed.status != Status::Value {
                            outcome = SheetOutcome::Error;
                            break;
                        }
                        if !observations_equivalent(expected, observed, tol) {
                            outcome = SheetOutcome::Fail;
                        }
                    }
                    (sheet.to_string(), outcome)
                })
                .collect();
            let passed_sheets = per_sheet.values().filter(|o| **o == SheetOutcome::Pass).count();
            Verdict {
                impl_id: table.columns[c].impl_id.clone(),
                total_sheets: per_sheet.len(),
                passed_sheets,
                per_sheet,
                vacuous,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairResult {
    pub a: String,
    pub b: String,
    pub equivalent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub columns: Vec<String>,
    /// Unordered pairs `a < b` in column order; the relation is reflexive
    /// and symmetric by construction.
    pub pairs: Vec<PairResult>,
    pub clusters: Vec<Vec<String>>,
}

impl EquivalenceReport {
    pub fn equivalent(&self, a: &str, b: &str) -> bool {
        a == b
            || self
                .pairs
                .iter()
                .any(|p| p.equivalent && ((p.a == a && p.b == b) || (p.a == b && p.b == a)))
    }

    pub fn cluster_of(&self, id: &str) -> Option<&Vec<String>> {
        self.clusters.iter().find(|c| c.iter().any(|m| m == id))
    }

    /// Cluster sizes in cluster order.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }
}

/// Compares two columns row by row. An oracle column only speaks on the
/// rows it defines; a pair with no common row is not equivalent.
fn columns_equivalent(table: &Table, a: usize, b: usize, tol: f64) -> bool {
    let mut compared = 0;
    for r in 0..table.rows.len() {
        match (table.cell(r, a), table.cell(r, b)) {
            (Some(x), Some(y)) => {
                compared += 1;
                if !observations_equivalent(x, y, tol) {
                    return false;
                }
            }
            _ => continue,
        }
    }
    compared > 0 || table.rows.is_empty()
}

pub fn equivalence(table: &Table, tol: f64) -> Result<EquivalenceReport, AnalysisError> {
    equivalence_with(table, tol, Parallelism::Auto)
}

pub fn equivalence_with(table: &Table, tol: f64, parallelism: Parallelism) -> Result<EquivalenceReport, AnalysisError> {
    check_complete(table)?;
    let n = table.columns.len();
    let index_pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let results = map_ordered(&index_pairs, parallelism, |&(i, j)| columns_equivalent(table, i, j, tol));

    // Union-find over columns; roots are the smallest index in each set.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (&(i, j), &eq) in index_pairs.iter().zip(&results) {
        if eq {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for c in 0..n {
        let root = find(&mut parent, c);
        groups.entry(root).or_default().push(table.columns[c].impl_id.clone());
    }
    let id = |c: usize| table.columns[c].impl_id.clone();
    Ok(EquivalenceReport {
        columns: (0..n).map(id).collect(),
        pairs: index_pairs
            .iter()
            .zip(results)
            .map(|(&(i, j), equivalent)| PairResult { a: id(i), b: id(j), equivalent })
            .collect(),
        clusters: groups.into_values().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ArmSummary {
    pub arm: String,
    pub candidates: usize,
    pub fully_correct: usize,
    pub mean_pass_fraction: f64,
    /// Mean pass fraction minus the baseline (first) arm's.
    pub delta_vs_baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ArmComparison {
    pub dimension: String,
    pub baseline: String,
    pub arms: Vec<ArmSummary>,
}

/// Mean functional correctness per arm, for coordinates that differ only in
/// `dimension`. Arms are ordered by their dimension value.
pub fn compare_arms<'a>(
    entries: impl IntoIterator<Item = (&'a Coord, &'a Table)>,
    dimension: &str,
    tol: f64,
) -> Result<ArmComparison, AnalysisError> {
    let entries: Vec<(&Coord, &Table)> = entries.into_iter().collect();
    if entries.len() < 2 {
        return Err(AnalysisError::DimensionMismatch(format!(
            "comparing along `{dimension}` needs at least two coordinates, found {}",
            entries.len()
        )));
    }
    let rest = entries[0].0.without(dimension);
    let mut arms: Vec<(&str, &Table)> = Vec::with_capacity(entries.len());
    for (coord, table) in &entries {
        let arm = coord
            .get(dimension)
            .ok_or_else(|| AnalysisError::DimensionMismatch(format!("coordinate {coord} has no `{dimension}` dimension")))?;
        if coord.without(dimension) != rest {
            return Err(AnalysisError::DimensionMismatch(format!(
                "coordinates {} and {coord} differ outside `{dimension}`",
                entries[0].0
            )));
        }
        arms.push((arm, table));
    }
    arms.sort_by(|a, b| a.0.cmp(b.0));
    let mut summaries = Vec::with_capacity(arms.len());
    for (arm, table) in arms {
        let vs = verdicts(table, tol)?;
        if vs.is_empty() {
            return Err(AnalysisError::EmptyArm(arm.to_string()));
        }
        let mean = vs.iter().map(Verdict::pass_fraction).sum::<f64>() / vs.len() as f64;
        summaries.push(ArmSummary {
            arm: arm.to_string(),
            candidates: vs.len(),
            fully_correct: vs.iter().filter(|v| v.fully_correct()).count(),
            mean_pass_fraction: mean,
            delta_vs_baseline: 0.0,
        });
    }
    let base = summaries[0].mean_pass_fraction;
    for s in &mut summaries {
        s.delta_vs_baseline = s.mean_pass_fraction - base;
    }
    Ok(ArmComparison { dimension: dimension.to_string(), baseline: summaries[0].arm.clone(), arms: summaries })
}

/// Which columns are candidates (oracle excluded), in column order.
pub fn candidate_ids(table: &Table) -> Vec<&str> {
    table
        .columns
        .iter()
        .filter(|c| c.kind == ColumnKind::Candidate)
        .map(|c| c.impl_id.as_str())
        .collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::srm::{Implementation, Observation, StimulusMatrix};
    use crate::value::Value;

    pub const PADDED: &str = "SGVsbG8gV29ybGQ=";
    pub const UNPADDED: &str = "SGVsbG8gV29ybGQ";
    pub const NO_PAD_NEEDED: &str = "SGVsbG8gV29ybGQh";

    #[derive(Debug, Clone, Copy)]
    pub enum Behavior {
        Correct,
        Unpadded,
        Raises,
    }

    /// Fills a Base64 matrix with one candidate per behavior, using the
    /// observations a reference codec produces for "Hello World!" and
    /// "Hello World".
    pub fn base64_with(behaviors: &[Behavior]) -> StimulusMatrix {
        let mut m = crate::srm::tests::base64_matrix();
        let impls = (1..=behaviors.len())
            .map(|i| Implementation { impl_id: format!("c{i}"), source_text: "x".into(), ..Default::default() })
            .collect();
        m.add_implementations(impls).unwrap();
        let rows = m.table.rows.clone();
        for (i, b) in behaviors.iter().enumerate() {
            let id = format!("c{}", i + 1);
            for (r, row) in rows.iter().enumerate() {
                let obs = match (r % 2, r / 2, b) {
                    (0, _, _) => Observation::value(Value::Ref(1)),
                    (_, _, Behavior::Raises) => Observation::exception("ValueError: unsupported input"),
                    (_, 0, _) => Observation::value(Value::bytes(NO_PAD_NEEDED)),
                    (_, _, Behavior::Correct) => Observation::value(Value::bytes(PADDED)),
                    (_, _, Behavior::Unpadded) => Observation::value(Value::bytes(UNPADDED)),
                };
                m.record(row, &id, obs).unwrap();
            }
        }
        m
    }
}
