//! Acceptance gate: runs each criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use tdse_core::analysis::{compare_arms, equivalence, verdicts, DEFAULT_FLOAT_TOL};
use tdse_core::arena::FakeRunner;
use tdse_core::engine::{run_study, RunContext, RunOutcome, RunStatus};
use tdse_core::lql::{parse_lql, render_lql, InterfaceSignature, OperationSig, TypeName};
use tdse_core::pipeline::{build_dag, parse_study, DagError, StudyScript};
use tdse_core::srm::{
    export_long, import_long_jsonl, Coord, ExportFormat, Implementation, Observation, RowKey, SrmError, StimulusMatrix,
    DIM_ARM, DIM_MATRIX, ORACLE_ID,
};
use tdse_core::ssn::{parse_sheet_rows, resolve, ResolveError, SheetError};
use tdse_core::Value;

/// Absolute tolerance for pass-fraction arithmetic.
const FRACTION_TOL: f64 = 1e-12;

type Check = fn() -> Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn study_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../studies/base64")
}

fn bundled_study() -> StudyScript {
    let text = std::fs::read_to_string(study_dir().join("study.tdse")).expect("bundled study");
    parse_study(&text).expect("bundled study parses")
}

/// Reference codec output for the two encode tests' inputs.
fn reference() -> [Vec<u8>; 2] {
    ["Hello World!", "Hello World"].map(|plain| STANDARD.encode(plain).into_bytes())
}

fn offline_run(out: &Path, samples: i64) -> RunOutcome {
    let runner = FakeRunner::from_path(&study_dir().join("fake_runner.json")).expect("fake table");
    let ctx = RunContext { runner: &runner, base_dir: study_dir(), out_dir: out.to_path_buf() };
    let overrides = [("provider".to_string(), Value::Str("mock".into())), ("samples".to_string(), Value::Int(samples))];
    run_study(&bundled_study(), &overrides, &ctx).expect("study runs")
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

fn structure() -> Result<(), String> {
    let start = Instant::now();
    let script = bundled_study();
    let names: Vec<_> = script.actions.iter().map(|a| a.name.as_str()).collect();
    ensure(names == ["create", "generate", "execute"], || format!("actions {names:?}"))?;
    ensure(script.globals.get("samples") == Some(&Value::Int(5)), || "samples global".into())?;
    let dag = build_dag(&script).map_err(|e| e.to_string())?;
    let edges: Vec<(&str, &str)> = dag.edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    ensure(edges == [("create", "generate"), ("generate", "execute")], || format!("edges {edges:?}"))?;
    ensure(dag.order == ["create", "generate", "execute"], || format!("order {:?}", dag.order))?;

    let decl = &script.action("create").unwrap().matrices[0];
    let m = StimulusMatrix::new(decl.id.clone(), decl.signature().map_err(|e| e.to_string())?, decl.sheets.clone())
        .map_err(|e| e.to_string())?;
    ensure(m.table.rows.len() == 4, || format!("{} rows", m.table.rows.len()))?;
    ensure(m.table.set_cell_count() == 2, || format!("{} oracle cells", m.table.set_cell_count()))?;
    // The oracle cells hold what a standard codec produces.
    let oracle: Vec<_> = m.table.cells().map(|(_, _, o)| o.value.clone()).collect();
    let expected: Vec<_> = reference().into_iter().map(|e| Some(Value::Bytes(e))).collect();
    ensure(oracle == expected, || format!("oracle {oracle:?}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = offline_run(dir.path(), 5);
    let shape = out.srh.entries.values().next().map(|m| m.shape());
    ensure(shape == Some((4, 6)), || format!("final shape {shape:?}"))?;
    within(Duration::from_secs(1), start)
}

fn offline_end_to_end() -> Result<(), String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = offline_run(dir.path(), 5);
    ensure(out.record.status == RunStatus::Completed, || format!("run {:?}", out.record.error))?;
    let entry = out.report.entries.first().ok_or("no report entry")?;
    let fractions: Vec<f64> = entry.verdicts.iter().map(|v| v.pass_fraction()).collect();
    let want = [1.0, 1.0, 1.0, 0.5, 0.0];
    ensure(
        fractions.len() == 5 && fractions.iter().zip(want).all(|(a, b)| (a - b).abs() <= FRACTION_TOL),
        || format!("pass fractions {fractions:?}"),
    )?;
    let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let clusters = &entry.clusters;
    let want_clusters = vec![
        ids(&[ORACLE_ID, "generate-base64-s1", "generate-base64-s2", "generate-base64-s3"]),
        ids(&["generate-base64-s4"]),
        ids(&["generate-base64-s5"]),
    ];
    ensure(*clusters == want_clusters, || format!("clusters {clusters:?}"))?;
    let csv = std::fs::read_to_string(dir.path().join("srh.csv")).map_err(|e| e.to_string())?;
    let lines = csv.lines().count();
    ensure(lines == 23, || format!("{lines} CSV lines, want 22 + header"))?;
    within(Duration::from_secs(5), start)
}

fn determinism() -> Result<(), String> {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    offline_run(a.path(), 5);
    offline_run(b.path(), 5);
    for file in ["srh.csv", "report.json", "srh.jsonl", "report.txt"] {
        let x = std::fs::read(a.path().join(file)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(file)).map_err(|e| e.to_string())?;
        ensure(x == y, || format!("{file} differs between runs"))?;
    }
    Ok(())
}

fn ident() -> impl Strategy<Value = String> {
    "[a-zA-Z][a-zA-Z0-9_]{0,6}"
}

fn type_name() -> impl Strategy<Value = TypeName> {
    (proptest::collection::vec(ident(), 1..3), 0usize..3)
        .prop_map(|(parts, dims)| TypeName::new(format!("{}{}", parts.join("."), "[]".repeat(dims))).unwrap())
}

fn signature() -> impl Strategy<Value = InterfaceSignature> {
    let op = (ident(), proptest::collection::vec(type_name(), 0..4), type_name())
        .prop_map(|(name, inputs, output)| OperationSig { name, inputs, output });
    (ident(), proptest::collection::vec(op, 1..6)).prop_map(|(name, ops)| {
        let mut seen = HashSet::new();
        let ops = ops.into_iter().filter(|o| seen.insert((o.name.clone(), o.inputs.len()))).collect();
        InterfaceSignature::new(name, ops).unwrap()
    })
}

fn grammars() -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    runner
        .run(&signature(), |sig| {
            prop_assert_eq!(parse_lql(&render_lql(&sig)).unwrap(), sig);
            Ok(())
        })
        .map_err(|e| format!("LQL round trip: {e}"))?;

    let fwd = parse_sheet_rows("t", "row _, create, Base64\nrow _, encode, A3", BTreeMap::new());
    ensure(fwd == Err(SheetError::ForwardCellReference { row: 2, target: 3 }), || format!("forward ref: {fwd:?}"))?;
    let sig = parse_lql("Base64 { encode(bytes)->bytes decode(str)->bytes }").unwrap();
    let sheet = parse_sheet_rows("t", "row _, create, Base64\nrow _, encode, A1, b\"AA==\", b\"AA==\"", BTreeMap::new())
        .map_err(|e| e.to_string())?;
    let arity = resolve(&sheet, &sig, 1).map(|_| ());
    let want = ResolveError::ArityMismatch { sheet: "t".into(), row: 2, operation: "encode".into(), expected: vec![1], actual: 2 };
    ensure(arity == Err(want), || format!("arity: {arity:?}"))?;

    let cyclic = parse_study(r#"study "s" { action "A" type = create { dependsOn "B" } action "B" type = create { dependsOn "A" } }"#)
        .map_err(|e| e.to_string())?;
    let cycle = build_dag(&cyclic).map(|_| ());
    ensure(cycle == Err(DagError::CycleDetected(vec!["A".into(), "B".into(), "A".into()])), || format!("cycle: {cycle:?}"))
}

fn srm_store() -> Result<(), String> {
    let script = bundled_study();
    let decl = &script.action("create").unwrap().matrices[0];
    let mut m = StimulusMatrix::new(decl.id.clone(), decl.signature().unwrap(), decl.sheets.clone()).map_err(|e| e.to_string())?;
    m.add_implementations(vec![Implementation { impl_id: "c1".into(), ..Default::default() }]).map_err(|e| e.to_string())?;
    let rows = m.table.rows.clone();
    let obs = Observation::value(Value::bytes(&reference()[0])).with_duration(17);
    m.record(&rows[1], "c1", obs.clone()).map_err(|e| e.to_string())?;
    let again = m.record(&rows[1], "c1", obs.clone());
    ensure(matches!(again, Err(SrmError::CellAlreadySet { .. })), || format!("write-once: {again:?}"))?;
    let ghost = RowKey { sheet: "nope".into(), statement: 9, label: String::new() };
    let unknown_row = m.record(&ghost, "c1", obs.clone());
    ensure(matches!(unknown_row, Err(SrmError::UnknownRow { .. })), || format!("unknown row: {unknown_row:?}"))?;
    let unknown_col = m.record(&rows[0], "c9", obs.clone());
    ensure(unknown_col == Err(SrmError::UnknownColumn("c9".into())), || format!("unknown column: {unknown_col:?}"))?;

    m.record(&rows[0], "c1", Observation::value(Value::Ref(1))).map_err(|e| e.to_string())?;
    m.record(&rows[2], "c1", Observation::exception("ValueError: bad")).map_err(|e| e.to_string())?;
    m.record(&rows[3], "c1", Observation::timeout("budget")).map_err(|e| e.to_string())?;
    let coord = Coord::new([(DIM_ARM, "a"), (DIM_MATRIX, "base64")]);
    let jsonl = export_long([(&coord, &m.table)], ExportFormat::Jsonl);
    let back = import_long_jsonl(std::str::from_utf8(&jsonl).unwrap()).map_err(|e| e.to_string())?;
    let table = back.get(&coord).ok_or("coordinate lost")?;
    ensure(table.cell_map() == m.table.cell_map(), || "JSONL round trip changed cells".into())
}

/// Builds the Base64 matrix with one candidate per behavior code:
/// `c` correct, `u` unpadded, `r` raises.
fn arm(behaviors: &str) -> StimulusMatrix {
    let script = bundled_study();
    let decl = &script.action("create").unwrap().matrices[0];
    let mut m = StimulusMatrix::new(decl.id.clone(), decl.signature().unwrap(), decl.sheets.clone()).unwrap();
    let ids: Vec<String> = (1..=behaviors.len()).map(|i| format!("s{i}")).collect();
    m.add_implementations(ids.iter().map(|id| Implementation { impl_id: id.clone(), ..Default::default() }).collect()).unwrap();
    let [no_pad, padded] = reference();
    let mut truncated = padded.clone();
    while truncated.last() == Some(&b'=') {
        truncated.pop();
    }
    let rows = m.table.rows.clone();
    for (id, b) in ids.iter().zip(behaviors.chars()) {
        for (r, row) in rows.iter().enumerate() {
            let obs = match (r, b) {
                (0 | 2, _) => Observation::value(Value::Ref(1)),
                (_, 'r') => Observation::exception("ValueError: unsupported input"),
                (1, _) => Observation::value(Value::Bytes(no_pad.clone())),
                (_, 'u') => Observation::value(Value::Bytes(truncated.clone())),
                _ => Observation::value(Value::Bytes(padded.clone())),
            };
            m.record(row, id, obs).unwrap();
        }
    }
    m
}

fn arm_comparison() -> Result<(), String> {
    let p1 = arm("cccur");
    let p2 = arm("currr");
    let f1: Vec<f64> = verdicts(&p1.table, DEFAULT_FLOAT_TOL).unwrap().iter().map(|v| v.pass_fraction()).collect();
    let f2: Vec<f64> = verdicts(&p2.table, DEFAULT_FLOAT_TOL).unwrap().iter().map(|v| v.pass_fraction()).collect();
    ensure(f1 == [1.0, 1.0, 1.0, 0.5, 0.0] && f2 == [1.0, 0.5, 0.0, 0.0, 0.0], || format!("fixtures {f1:?} {f2:?}"))?;
    let sizes = equivalence(&p1.table, DEFAULT_FLOAT_TOL).unwrap().cluster_sizes();
    ensure(sizes == [4, 1, 1], || format!("P1 clusters {sizes:?}"))?;
    let c1 = Coord::new([(DIM_ARM, "P1"), (DIM_MATRIX, "base64")]);
    let c2 = Coord::new([(DIM_ARM, "P2"), (DIM_MATRIX, "base64")]);
    let cmp = compare_arms([(&c1, &p1.table), (&c2, &p2.table)], DIM_ARM, DEFAULT_FLOAT_TOL).map_err(|e| e.to_string())?;
    let means: Vec<f64> = cmp.arms.iter().map(|a| a.mean_pass_fraction).collect();
    let delta = cmp.arms[1].delta_vs_baseline;
    ensure(
        (means[0] - 0.7).abs() <= FRACTION_TOL && (means[1] - 0.3).abs() <= FRACTION_TOL && (delta + 0.4).abs() <= FRACTION_TOL,
        || format!("means {means:?}, delta {delta}"),
    )
}

fn main() {
    let criteria: [(u32, &str, Check); 6] = [
        (1, "bundled study structure and final matrix shape", structure),
        (2, "offline run verdicts, clusters and CSV export", offline_end_to_end),
        (3, "repeated offline runs are byte-identical", determinism),
        (4, "LQL round trip, sheet errors, cycle report", grammars),
        (5, "matrix store contract and JSONL round trip", srm_store),
        (6, "arm comparison 0.7 vs 0.3, delta -0.4", arm_comparison),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(()) => println!("criterion {n}: PASS  {name} ({:.0?})", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
