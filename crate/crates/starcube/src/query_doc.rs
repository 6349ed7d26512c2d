//! JSON query request and response documents, shared by `POST /query`, the
//! `query` command and structured exports. Their shape is published in
//! `schema/api.schema.json`.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use starcube_core::query::{AggregateQuery, Engine, Force, MeasureRef, MeasureValue, PlanKind, ResultGrid, SortKey};
use starcube_core::store::{DateRange, FilterClause, ScanFilter, Warehouse};
use starcube_core::value::parse_iso_date;
use thiserror::Error;

/// A request problem, attributed to the offending field when there is one.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}{detail}", field.as_ref().map(|f| format!("{f}: ")).unwrap_or_default())]
pub struct DocError {
    pub field: Option<String>,
    pub detail: String,
}

impl DocError {
    pub fn at(field: impl Into<String>, detail: impl Into<String>) -> Self {
        DocError { field: Some(field.into()), detail: detail.into() }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { error: "invalid_request".into(), field: self.field.clone(), detail: self.detail.clone() }
    }
}

/// Error document of every endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub field: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    #[serde(default = "default_measures")]
    pub measures: Vec<String>,
    #[serde(default)]
    pub group_by: Vec<String>,
    #[serde(default)]
    pub filters: Vec<FilterDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<TimeRangeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sort: Option<SortDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force: Option<ForceDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub echo: Option<String>,
}

fn default_measures() -> Vec<String> {
    vec!["sum(montant)".into()]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterDoc {
    pub dimension: String,
    pub level: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeRangeDoc {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SortDoc {
    pub column: String,
    #[serde(default)]
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Asc,
    Desc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForceDoc {
    #[default]
    Auto,
    Mview,
    Cuboid,
    Scan,
}

impl From<ForceDoc> for Force {
    fn from(f: ForceDoc) -> Self {
        match f {
            ForceDoc::Auto => Force::Auto,
            ForceDoc::Mview => Force::MView,
            ForceDoc::Cuboid => Force::Cuboid,
            ForceDoc::Scan => Force::Scan,
        }
    }
}

impl QueryRequest {
    pub fn from_json(text: &str) -> Result<Self, DocError> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            // serde names unknown or mistyped fields in backquotes
            let field = msg.split('`').nth(1).filter(|_| msg.contains("field")).map(str::to_string);
            DocError { field, detail: msg }
        })
    }

    pub fn force(&self) -> Force {
        self.force.unwrap_or_default().into()
    }

    /// Validates every field against the warehouse and builds the query.
    pub fn to_query(&self, wh: &Warehouse) -> Result<AggregateQuery, DocError> {
        let schema = wh.schema();
        if self.measures.is_empty() {
            return Err(DocError::at("measures", "at least one measure is required"));
        }
        let measures = self
            .measures
            .iter()
            .enumerate()
            .map(|(i, m)| {
                MeasureRef::parse(schema, m).map_err(|e| DocError::at(format!("measures[{i}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut seen = BTreeSet::new();
        for (i, g) in self.group_by.iter().enumerate() {
            let field = format!("group_by[{i}]");
            let (d, _) = schema.resolve_level(g).ok_or_else(|| DocError::at(&field, format!("unknown level '{g}'")))?;
            if !seen.insert(d) {
                return Err(DocError::at(field, format!("dimension '{}' is grouped twice", schema.dimensions[d].name)));
            }
        }

        let mut filter = ScanFilter::default();
        for (i, f) in self.filters.iter().enumerate() {
            let at = |part: &str| format!("filters[{i}].{part}");
            let (d, table) = wh
                .dimension_named(&f.dimension)
                .map_err(|_| DocError::at(at("dimension"), format!("unknown dimension '{}'", f.dimension)))?;
            let l = table.level_index(&f.level).ok_or_else(|| {
                DocError::at(at("level"), format!("dimension '{}' has no level '{}'", f.dimension, f.level))
            })?;
            if f.members.is_empty() {
                return Err(DocError::at(at("members"), "member list must not be empty"));
            }
            let level = wh.dimension(d).level(l);
            if let Some(m) = f.members.iter().find(|m| level.id(m).is_none()) {
                return Err(DocError::at(
                    at("members"),
                    format!("'{m}' is not a member of {}.{}", f.dimension, f.level),
                ));
            }
            filter.restrict(FilterClause {
                dimension: f.dimension.clone(),
                level: f.level.clone(),
                members: f.members.iter().cloned().collect(),
            });
        }

        if let Some(r) = &self.time_range {
            let day = |s: &str, part: &str| {
                parse_iso_date(s).ok_or_else(|| {
                    DocError::at(format!("time_range.{part}"), format!("'{s}' is not a YYYY-MM-DD date"))
                })
            };
            let (from, to) = (day(&r.from, "from")?, day(&r.to, "to")?);
            if from > to {
                return Err(DocError::at("time_range", format!("{from} is after {to}")));
            }
            if schema.time_dimension().is_none() {
                return Err(DocError::at("time_range", "schema has no time dimension"));
            }
            filter.time_range = Some(DateRange { from, to });
        }

        let query = AggregateQuery {
            measures,
            group_by: self.group_by.clone(),
            filter,
            sort: self
                .sort
                .as_ref()
                .map(|s| SortKey { column: s.column.clone(), descending: s.direction == Direction::Desc }),
            limit: self.limit,
        };
        query.resolve(wh).map_err(|e| match e {
            starcube_core::query::QueryError::BadSort(_) => DocError::at("sort.column", e.to_string()),
            other => DocError { field: None, detail: other.to_string() },
        })?;
        Ok(query)
    }

    /// The request document equivalent to `query`.
    pub fn from_query(wh: &Warehouse, query: &AggregateQuery) -> Self {
        let schema = wh.schema();
        QueryRequest {
            measures: query.measures.iter().map(|m| m.render(schema)).collect(),
            group_by: query.group_by.clone(),
            filters: query
                .filter
                .clauses
                .iter()
                .map(|c| FilterDoc {
                    dimension: c.dimension.clone(),
                    level: c.level.clone(),
                    members: c.members.iter().cloned().collect(),
                })
                .collect(),
            time_range: query
                .filter
                .time_range
                .map(|r| TimeRangeDoc { from: r.from.to_string(), to: r.to.to_string() }),
            sort: query.sort.as_ref().map(|s| SortDoc {
                column: s.column.clone(),
                direction: if s.descending { Direction::Desc } else { Direction::Asc },
            }),
            limit: query.limit,
            force: None,
            echo: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisDoc {
    pub dimension: String,
    pub level: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberDoc {
    pub key: String,
    pub label: String,
}

/// A measure value: integers stay integers in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumberDoc {
    Int(i64),
    Float(f64),
}

impl From<MeasureValue> for NumberDoc {
    fn from(v: MeasureValue) -> Self {
        match v {
            MeasureValue::Int(i) => NumberDoc::Int(i),
            MeasureValue::Float(f) => NumberDoc::Float(f),
        }
    }
}

impl From<NumberDoc> for MeasureValue {
    fn from(v: NumberDoc) -> Self {
        match v {
            NumberDoc::Int(i) => MeasureValue::Int(i),
            NumberDoc::Float(f) => MeasureValue::Float(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDoc {
    pub members: Vec<MemberDoc>,
    pub values: Vec<NumberDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceDoc {
    /// `mview`, `cuboid` or `scan`.
    pub plan: String,
    /// View name, cuboid grouping or fact table.
    pub source: String,
    pub input_rows: usize,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub echo: Option<String>,
    pub epoch: u64,
    pub axes: Vec<AxisDoc>,
    pub measures: Vec<String>,
    pub rows: Vec<RowDoc>,
    pub provenance: ProvenanceDoc,
}

impl QueryResponse {
    pub fn from_grid(wh: &Warehouse, grid: &ResultGrid, echo: Option<String>, elapsed_ms: f64) -> Self {
        let schema = wh.schema();
        let plan = &grid.provenance.plan;
        let source = match plan {
            PlanKind::MView(n) => n.clone(),
            PlanKind::Cuboid(s) => s.display(schema).to_string(),
            PlanKind::Scan => schema.fact.name.clone(),
        };
        QueryResponse {
            echo,
            epoch: wh.epoch(),
            axes: grid
                .axes
                .iter()
                .map(|a| AxisDoc { dimension: a.dimension.clone(), level: a.level.clone() })
                .collect(),
            measures: grid.measures.clone(),
            rows: grid
                .rows
                .iter()
                .map(|r| RowDoc {
                    members: r
                        .members
                        .iter()
                        .map(|m| MemberDoc { key: m.key.clone(), label: m.label.clone() })
                        .collect(),
                    values: r.values.iter().map(|v| (*v).into()).collect(),
                })
                .collect(),
            provenance: ProvenanceDoc {
                plan: plan.name().into(),
                source,
                input_rows: grid.provenance.input_rows,
                elapsed_ms,
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("response documents always serialize")
    }

    /// Same document with timing zeroed, for comparisons across runs.
    pub fn without_timing(mut self) -> Self {
        self.provenance.elapsed_ms = 0.0;
        self
    }
}

/// Validates `req` and runs it, returning the grid and the elapsed milliseconds.
/// The HTTP handler and the `query` command both go through here.
pub fn execute(engine: &Engine<'_>, req: &QueryRequest) -> Result<(ResultGrid, f64), DocError> {
    let start = Instant::now();
    let query = req.to_query(engine.warehouse)?;
    let grid = engine
        .execute_forced(&query, req.force())
        .map_err(|e| DocError { field: None, detail: e.to_string() })?
        .ok_or_else(|| {
            let source = if req.force() == Force::MView { "materialized view" } else { "built cuboid" };
            DocError::at("force", format!("no {source} can answer this query"))
        })?;
    Ok((grid, start.elapsed().as_secs_f64() * 1000.0))
}
