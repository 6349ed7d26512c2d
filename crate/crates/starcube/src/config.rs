//! The pipeline config document (TOML): settings, sources with their layouts
//! and cleaning rules, and materialized view definitions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use starcube_core::clean::{BinMode, CleanAction, CleaningRule};
use starcube_core::mview::MViewDef;
use starcube_core::query::MeasureRef;
use starcube_core::schema::StarSchema;
use starcube_core::store::UnknownPolicy;

use crate::error::{Error, Result};
use crate::schema_doc::toml_error;

/// Target name for fact sources.
pub const FACT_TARGET: &str = "fact";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub pipeline: PipelineSettings,
    #[serde(rename = "source", default)]
    pub sources: Vec<SourceSpec>,
    #[serde(rename = "view", default)]
    pub views: Vec<ViewSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSettings {
    #[serde(default)]
    pub unknown_members: UnknownMembers,
    #[serde(default = "yes")]
    pub auto_refresh: bool,
    /// Relative to the warehouse directory.
    #[serde(default = "default_reject_log")]
    pub reject_log: String,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            unknown_members: UnknownMembers::Reject,
            auto_refresh: true,
            reject_log: default_reject_log(),
        }
    }
}

fn yes() -> bool {
    true
}

fn default_reject_log() -> String {
    "rejects.csv".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownMembers {
    #[default]
    Reject,
    RouteToUnknown,
}

impl From<UnknownMembers> for UnknownPolicy {
    fn from(u: UnknownMembers) -> Self {
        match u {
            UnknownMembers::Reject => UnknownPolicy::Reject,
            UnknownMembers::RouteToUnknown => UnknownPolicy::RouteToUnknown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Delimited,
    FixedWidth,
    SheetExport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub id: String,
    pub kind: SourceKind,
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    /// A dimension name or `fact`.
    pub target: String,
    #[serde(default)]
    pub priority: i64,
    /// Defaults to `,` for delimited and `;` for sheet exports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delimiter: Option<char>,
    #[serde(default = "yes")]
    pub header: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<FixedWidthLayout>,
    /// Column types for delimited sources; untyped columns stay text.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub types: BTreeMap<String, ColumnType>,
    #[serde(rename = "clean", default, skip_serializing_if = "Vec::is_empty")]
    pub clean: Vec<CleanSpec>,
}

impl SourceSpec {
    pub fn is_fact(&self) -> bool {
        self.target == FACT_TARGET
    }

    pub fn delimiter_byte(&self) -> u8 {
        match (self.delimiter, self.kind) {
            (Some(c), _) => c as u8,
            (None, SourceKind::SheetExport) => b';',
            (None, _) => b',',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedWidthLayout {
    pub record_length: usize,
    #[serde(rename = "field", default)]
    pub fields: Vec<LayoutField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutField {
    pub name: String,
    pub offset: usize,
    pub width: usize,
    pub kind: FieldKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Text,
    Integer,
    DateYyyymmdd,
    ZonedAmount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Text,
    Integer,
    Decimal,
    Date,
    /// Whole millimes.
    Amount,
}

impl FixedWidthLayout {
    /// Problems with the layout itself, independent of any file.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.record_length == 0 {
            out.push("record_length must be positive".to_string());
        }
        let mut spans: Vec<(usize, usize, &str)> = Vec::new();
        for f in &self.fields {
            if f.width == 0 {
                out.push(format!("field {} has zero width", f.name));
            }
            if f.offset + f.width > self.record_length {
                out.push(format!(
                    "field {} ends at {} past record_length {}",
                    f.name,
                    f.offset + f.width,
                    self.record_length
                ));
            }
            for (a, b, other) in &spans {
                if f.offset < *b && *a < f.offset + f.width {
                    out.push(format!("fields {other} and {} overlap", f.name));
                }
            }
            spans.push((f.offset, f.offset + f.width, &f.name));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanActionName {
    ImputeMean,
    ImputeRegression,
    SmoothBins,
    Standardize,
    Correct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleanSpec {
    pub column: String,
    pub action: CleanActionName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub values: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl CleanSpec {
    pub fn to_rule(&self) -> std::result::Result<CleaningRule, String> {
        let action = match self.action {
            CleanActionName::ImputeMean => CleanAction::ImputeMean,
            CleanActionName::ImputeRegression => {
                let predictor = self.predictor.clone().ok_or("impute_regression needs a predictor")?;
                if predictor == self.column {
                    return Err("predictor must differ from the cleaned column".into());
                }
                CleanAction::ImputeRegression { predictor }
            }
            CleanActionName::SmoothBins => {
                let k = self.k.ok_or("smooth_bins needs k")?;
                if k == 0 {
                    return Err("k must be at least 1".into());
                }
                let mode = match self.mode.as_deref() {
                    None => BinMode::Means,
                    Some(m) => BinMode::parse(m).ok_or_else(|| format!("unknown bin mode '{m}'"))?,
                };
                CleanAction::SmoothBins { k, mode }
            }
            CleanActionName::Standardize => CleanAction::Standardize,
            CleanActionName::Correct => CleanAction::Correct(self.values.clone()),
        };
        Ok(CleaningRule { column: self.column.clone(), action, output: self.output.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub name: String,
    pub group_by: Vec<String>,
    #[serde(default = "default_measures")]
    pub measures: Vec<String>,
    #[serde(default = "yes")]
    pub rewrite: bool,
}

fn default_measures() -> Vec<String> {
    vec!["sum(montant)".into()]
}

impl ViewSpec {
    pub fn from_def(schema: &StarSchema, def: &MViewDef) -> Self {
        ViewSpec {
            name: def.name.clone(),
            group_by: def.group_by.clone(),
            measures: def.measures.iter().map(|m| m.render(schema)).collect(),
            rewrite: def.rewrite_enabled,
        }
    }

    pub fn to_def(&self, schema: &StarSchema) -> Result<MViewDef> {
        let measures =
            self.measures.iter().map(|m| MeasureRef::parse(schema, m)).collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(MViewDef {
            name: self.name.clone(),
            group_by: self.group_by.clone(),
            measures,
            rewrite_enabled: self.rewrite,
        })
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let (line, message) = toml_error(text, &e);
            Error::Config(format!("pipeline config, line {line}: {message}"))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut cfg.sources {
            if s.path.is_relative() {
                s.path = base.join(&s.path);
            }
        }
        Ok(cfg)
    }

    pub fn to_document(&self) -> String {
        toml::to_string_pretty(self).expect("config documents always serialize")
    }

    /// Cross-checks sources and views against `schema`.
    pub fn check(&self, schema: &StarSchema) -> Result<()> {
        let mut problems = Vec::new();
        let mut ids = std::collections::BTreeSet::new();
        for s in &self.sources {
            let at = |m: String| format!("source {}: {m}", s.id);
            if !ids.insert(s.id.as_str()) {
                problems.push(at("duplicate source id".into()));
            }
            if !s.is_fact() && schema.dimension(&s.target).is_none() {
                problems.push(at(format!("unknown target '{}'", s.target)));
            }
            match (s.kind, &s.layout) {
                (SourceKind::FixedWidth, None) => problems.push(at("fixed_width source needs a layout".into())),
                (SourceKind::FixedWidth, Some(l)) => problems.extend(l.check().into_iter().map(at)),
                (_, Some(_)) => problems.push(at("layout is only valid for fixed_width sources".into())),
                _ => {}
            }
            if s.kind == SourceKind::FixedWidth && !s.types.is_empty() {
                problems.push(at("types are only valid for delimited sources".into()));
            }
            for c in &s.clean {
                if let Err(m) = c.to_rule() {
                    problems.push(at(format!("clean {}: {m}", c.column)));
                }
            }
        }
        for v in &self.views {
            if let Err(e) = v.to_def(schema).and_then(|d| d.resolve(schema).map_err(Error::from)) {
                problems.push(format!("view {}: {e}", v.name));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use starcube_core::schema::nssf_default_schema;

    const DOC: &str = r#"
[pipeline]
unknown_members = "reject"

[[source]]
id = "offices_cobol"
kind = "fixed_width"
path = "offices.dat"
target = "office"
priority = 3
[source.layout]
record_length = 20
[[source.layout.field]]
name = "code_br"
offset = 0
width = 4
kind = "integer"
[[source.layout.field]]
name = "nom_br"
offset = 4
width = 16
kind = "text"

[[source]]
id = "mvt"
kind = "sheet_export"
path = "mvt.csv"
target = "fact"
[source.types]
montant = "amount"
[[source.clean]]
column = "montant"
action = "smooth_bins"
k = 3
mode = "boundaries"
output = "montant_b"

[[view]]
name = "V"
group_by = ["office.governorate"]
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = PipelineConfig::parse(DOC).unwrap();
        assert!(cfg.pipeline.auto_refresh);
        assert_eq!(cfg.sources.len(), 2);
        assert_eq!(cfg.sources[1].delimiter_byte(), b';');
        assert_eq!(cfg.sources[1].types["montant"], ColumnType::Amount);
        assert_eq!(cfg.views[0].measures, vec!["sum(montant)".to_string()]);
        cfg.check(&nssf_default_schema()).unwrap();
        let again = PipelineConfig::parse(&cfg.to_document()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn layout_problems_are_reported() {
        let bad = DOC.replace("offset = 4", "offset = 2").replace("width = 16", "width = 19");
        let err = PipelineConfig::parse(&bad).unwrap().check(&nssf_default_schema()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("overlap"), "{msg}");
        assert!(msg.contains("past record_length"), "{msg}");
    }

    #[test]
    fn unknown_fields_and_targets() {
        let e = PipelineConfig::parse("[pipeline]\nspeed = 3\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let cfg = PipelineConfig::parse(&DOC.replace("target = \"office\"", "target = \"agency\"")).unwrap();
        assert!(cfg.check(&nssf_default_schema()).unwrap_err().to_string().contains("unknown target"));
    }
}
