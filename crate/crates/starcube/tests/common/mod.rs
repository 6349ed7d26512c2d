#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::Value;
use starcube::config::PipelineConfig;
use starcube::pipeline::run_pipeline;
use starcube::state::State;
use starcube_core::schema::nssf_default_schema;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/balances")
}

pub fn empty_state() -> State {
    State::new(Arc::new(nssf_default_schema())).unwrap()
}

/// The fixture loaded through the ETL pipeline.
pub fn balances_state() -> State {
    let cfg = PipelineConfig::load(&fixture_dir().join("pipeline.toml")).unwrap();
    let out = run_pipeline(&cfg, &empty_state()).unwrap();
    assert!(out.rejects.is_empty(), "{:?}", out.rejects);
    out.state
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrintedRow {
    pub row: usize,
    pub governorate: String,
    pub office: String,
    pub code: String,
    pub montant: i64,
}

/// The printed rows, in print order.
pub fn printed_rows() -> Vec<PrintedRow> {
    let mut r = csv::Reader::from_path(fixture_dir().join("expected.csv")).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            PrintedRow {
                row: rec[0].parse().unwrap(),
                governorate: rec[1].into(),
                office: rec[2].into(),
                code: rec[3].into(),
                montant: rec[4].parse().unwrap(),
            }
        })
        .collect()
}

/// Panics unless `doc` validates against `#/$defs/<def>` of the published schema.
pub fn assert_valid(def: &str, doc: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema/api.schema.json");
    let mut schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert!(schema["$defs"].get(def).is_some(), "schema has no definition {def}");
    schema["$ref"] = Value::String(format!("#/$defs/{def}"));
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{def}: {errors:?}\n{doc:#}");
}
