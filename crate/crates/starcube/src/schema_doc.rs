//! The schema document: TOML with one `[fact]` table and `[[dimension]]`
//! blocks, versioned by `schema_version = 1`.
//!
//! ```toml
//! schema_version = 1
//!
//! [fact]
//! name = "mvtass"
//! [[fact.key]]
//! dimension = "office"
//! column = "code_br"
//! [[fact.measure]]
//! name = "montant"
//! aggregator = "sum"
//! unit = "millimes"
//!
//! [[dimension]]
//! name = "office"
//! [[dimension.attribute]]
//! name = "code_br"
//! kind = "integer"
//! [[dimension.level]]
//! name = "office"
//! ordinal = 0
//! key = "code_br"
//! label = "nom_br"
//! ```

use serde::{Deserialize, Serialize};
use starcube_core::schema::{
    AttributeDef, DimensionDef, DimensionKey, FactDef, LevelDef, MeasureDef, StarSchema, Violation,
};
use starcube_core::value::ScalarKind;
use thiserror::Error;

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Error)]
pub enum SchemaDocError {
    #[error("schema document, line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported schema_version {0}, expected {SCHEMA_VERSION}")]
    Version(i64),
    #[error("{path}: unknown attribute kind '{kind}'")]
    Kind { path: String, kind: String },
    #[error("schema has {} violation(s): {}", .0.len(), list(.0))]
    Invalid(Vec<Violation>),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| format!("{}: {}", x.path, x.message)).collect::<Vec<_>>().join("; ")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    schema_version: i64,
    fact: FactDoc,
    #[serde(rename = "dimension", default)]
    dimensions: Vec<DimensionDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactDoc {
    name: String,
    #[serde(rename = "key", default)]
    keys: Vec<KeyDoc>,
    #[serde(rename = "measure", default)]
    measures: Vec<MeasureDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyDoc {
    dimension: String,
    column: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureDoc {
    name: String,
    aggregator: String,
    #[serde(default = "default_unit")]
    unit: String,
}

fn default_unit() -> String {
    "millimes".into()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DimensionDoc {
    name: String,
    #[serde(rename = "attribute", default)]
    attributes: Vec<AttributeDoc>,
    #[serde(rename = "level", default)]
    levels: Vec<LevelDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeDoc {
    name: String,
    kind: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelDoc {
    name: String,
    ordinal: usize,
    key: String,
    label: String,
}

/// Line (1-based) of a byte offset.
pub(crate) fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

pub(crate) fn toml_error(text: &str, e: &toml::de::Error) -> (usize, String) {
    let line = e.span().map_or(0, |s| line_of(text, s.start));
    (line, e.message().to_string())
}

/// Parses and validates a schema document.
pub fn load_schema(text: &str) -> Result<StarSchema, SchemaDocError> {
    let doc: Doc = toml::from_str(text).map_err(|e| {
        let (line, message) = toml_error(text, &e);
        SchemaDocError::Parse { line, message }
    })?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(SchemaDocError::Version(doc.schema_version));
    }
    let mut dimensions = Vec::with_capacity(doc.dimensions.len());
    for d in doc.dimensions {
        let mut attributes = Vec::with_capacity(d.attributes.len());
        for a in d.attributes {
            let kind = ScalarKind::parse(&a.kind).ok_or_else(|| SchemaDocError::Kind {
                path: format!("dimension.{}.attribute.{}", d.name, a.name),
                kind: a.kind.clone(),
            })?;
            attributes.push(AttributeDef { name: a.name, kind });
        }
        let levels = d
            .levels
            .into_iter()
            .map(|l| LevelDef { name: l.name, ordinal: l.ordinal, key_attribute: l.key, label_attribute: l.label })
            .collect();
        dimensions.push(DimensionDef { name: d.name, levels, attributes });
    }
    let schema = StarSchema {
        fact: FactDef {
            name: doc.fact.name,
            dimension_keys: doc
                .fact
                .keys
                .into_iter()
                .map(|k| DimensionKey { dimension: k.dimension, column: k.column })
                .collect(),
            measures: doc
                .fact
                .measures
                .into_iter()
                .map(|m| MeasureDef { name: m.name, aggregator: m.aggregator, unit: m.unit })
                .collect(),
        },
        dimensions,
    };
    let violations = schema.validate();
    if violations.is_empty() {
        Ok(schema)
    } else {
        Err(SchemaDocError::Invalid(violations))
    }
}

/// Writes `schema` as a document that [`load_schema`] reads back unchanged.
pub fn to_document(schema: &StarSchema) -> String {
    let doc = Doc {
        schema_version: SCHEMA_VERSION,
        fact: FactDoc {
            name: schema.fact.name.clone(),
            keys: schema
                .fact
                .dimension_keys
                .iter()
                .map(|k| KeyDoc { dimension: k.dimension.clone(), column: k.column.clone() })
                .collect(),
            measures: schema
                .fact
                .measures
                .iter()
                .map(|m| MeasureDoc { name: m.name.clone(), aggregator: m.aggregator.clone(), unit: m.unit.clone() })
                .collect(),
        },
        dimensions: schema
            .dimensions
            .iter()
            .map(|d| DimensionDoc {
                name: d.name.clone(),
                attributes: d
                    .attributes
                    .iter()
                    .map(|a| AttributeDoc { name: a.name.clone(), kind: a.kind.as_str().into() })
                    .collect(),
                levels: d
                    .levels
                    .iter()
                    .map(|l| LevelDoc {
                        name: l.name.clone(),
                        ordinal: l.ordinal,
                        key: l.key_attribute.clone(),
                        label: l.label_attribute.clone(),
                    })
                    .collect(),
            })
            .collect(),
    };
    toml::to_string_pretty(&doc).expect("schema documents always serialize")
}
